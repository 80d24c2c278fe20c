"""Extended Kalman filter over control-affine models.

Prediction linearizes the discrete map at the current mean; the update is a
standard linear-measurement Kalman step in Joseph form with post-step
symmetrization, so the covariance survives long trials as symmetric PSD.
Measurement rows flagged as angles get their innovation wrapped to
(-pi, pi], which keeps heading estimates sane across the branch cut.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .beliefs import GaussianBelief
from .dynamics import ControlAffineModel
from .errors import DimensionMismatch, InvalidInput, SingularInnovation


def wrap_angle(value: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    wrapped = np.mod(-np.asarray(value, dtype=float) + math.pi, 2.0 * math.pi)
    return -(wrapped - math.pi)


def _check_psd_matrix(name: str, mat: np.ndarray, strict: bool = False) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidInput(f"{name} has non-finite entries")
    if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-10:
        raise InvalidInput(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    floor = 1e-15 if strict else -1e-10
    if eigs.size and eigs[0] < floor:
        kind = "positive definite" if strict else "PSD"
        raise InvalidInput(f"{name} must be {kind}; min eigenvalue {eigs[0]:.3e}")
    return mat


@dataclass(frozen=True)
class EkfConfig:
    """Noise covariances and the linear measurement model.

    process_cov (Q) and initial_cov (P0) must be symmetric PSD;
    measurement_cov (R) must be positive definite. measurement_matrix (H)
    maps state to observation; angle_rows lists observation rows holding
    angles, whose innovations are wrapped to (-pi, pi].
    """

    process_cov: np.ndarray
    measurement_cov: np.ndarray
    initial_cov: np.ndarray
    measurement_matrix: np.ndarray
    angle_rows: Sequence[int] = ()

    def __post_init__(self):
        q = _check_psd_matrix("process_cov", self.process_cov)
        r = _check_psd_matrix("measurement_cov", self.measurement_cov, strict=True)
        p0 = _check_psd_matrix("initial_cov", self.initial_cov)
        h = np.asarray(self.measurement_matrix, dtype=float)
        if h.ndim != 2:
            raise DimensionMismatch(f"measurement_matrix must be 2-D, got {h.shape}")
        if h.shape != (r.shape[0], q.shape[0]):
            raise DimensionMismatch(
                f"measurement_matrix shape {h.shape} inconsistent with "
                f"R {r.shape} and Q {q.shape}"
            )
        if p0.shape != q.shape:
            raise DimensionMismatch(
                f"initial_cov shape {p0.shape} != process_cov shape {q.shape}"
            )
        rows = tuple(int(i) for i in self.angle_rows)
        if any(i < 0 or i >= h.shape[0] for i in rows):
            raise InvalidInput(f"angle_rows {rows} outside measurement range")
        object.__setattr__(self, "process_cov", q)
        object.__setattr__(self, "measurement_cov", r)
        object.__setattr__(self, "initial_cov", p0)
        object.__setattr__(self, "measurement_matrix", h)
        object.__setattr__(self, "angle_rows", rows)


def ekf_predict(
    belief: GaussianBelief,
    model: ControlAffineModel,
    u: np.ndarray,
    cfg: EkfConfig,
) -> GaussianBelief:
    """One prediction step: mean through the dynamics, covariance linearized.

    The process noise is zero-mean with covariance cfg.process_cov.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (model.control_dim,):
        raise DimensionMismatch(f"control shape {u.shape} != ({model.control_dim},)")
    mean_row = np.atleast_2d(belief.mean)
    mean_next = (model.drift(mean_row) + model.actuation(mean_row) @ u)[0]
    jac = model.jacobian(belief.mean, u)
    cov_next = jac @ belief.covariance @ jac.T + cfg.process_cov
    return GaussianBelief(mean=mean_next, covariance=0.5 * (cov_next + cov_next.T))


def ekf_update(
    belief: GaussianBelief,
    measurement: np.ndarray,
    cfg: EkfConfig,
) -> GaussianBelief:
    """One measurement update in Joseph form.

    Raises SingularInnovation when the innovation covariance has no
    Cholesky factor.
    """
    y = np.asarray(measurement, dtype=float)
    h = cfg.measurement_matrix
    if y.shape != (h.shape[0],):
        raise DimensionMismatch(f"measurement shape {y.shape} != ({h.shape[0]},)")
    if not np.all(np.isfinite(y)):
        raise InvalidInput("measurement has non-finite entries")
    innovation = y - h @ belief.mean
    for row in cfg.angle_rows:
        innovation[row] = wrap_angle(innovation[row])
    s = h @ belief.covariance @ h.T + cfg.measurement_cov
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(
            f"innovation covariance is not positive definite: {exc}"
        ) from exc
    # K = P H^T S^-1 via two triangular solves.
    pht = belief.covariance @ h.T
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, pht.T)).T
    mean = belief.mean + gain @ innovation
    closure = np.eye(belief.dim) - gain @ h
    cov = (
        closure @ belief.covariance @ closure.T
        + gain @ cfg.measurement_cov @ gain.T
    )
    return GaussianBelief(mean=mean, covariance=0.5 * (cov + cov.T))
