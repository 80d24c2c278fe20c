"""Gaussian beliefs, PSD factorization, and seeded joint particle sampling.

Particle draws are keyed by a single 64-bit seed fed to a counter-based
generator (Philox), so any (master seed, trial, timestep) stream can be
reproduced bit-for-bit without carrying generator state around.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidInput, NotPSD

SYMMETRY_TOL = 1e-10
EIG_FLOOR = -1e-10
_JITTER = 1e-12


def _as_matrix(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise InvalidInput("covariance has non-finite entries")
    asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    if asym > SYMMETRY_TOL:
        raise InvalidInput(f"covariance asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}")
    return cov


def _check_psd(cov: np.ndarray) -> np.ndarray:
    """Return eigenvalues, raising NotPSD if any falls below the floor."""
    eigs = np.linalg.eigvalsh(cov)
    if eigs.size and eigs[0] < EIG_FLOOR:
        raise NotPSD(f"minimum eigenvalue {eigs[0]:.3e} below {EIG_FLOOR:.0e}")
    return eigs


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian state estimate.

    The covariance must be symmetric within 1e-10 and have eigenvalues
    no smaller than -1e-10.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1:
            raise DimensionMismatch(f"mean must be a vector, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise InvalidInput("mean has non-finite entries")
        cov = _as_matrix(self.covariance)
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch(
                f"mean dim {mean.shape[0]} != covariance dim {cov.shape[0]}"
            )
        _check_psd(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def max_eigenvalue(self) -> float:
        """Largest covariance eigenvalue; feeds the sub-Gaussian parameter."""
        return float(np.linalg.eigvalsh(self.covariance)[-1])


@dataclass(frozen=True)
class CholeskyResult:
    """Lower-triangular factor L with L @ L.T reproducing the input.

    ``jitter`` is 0.0 when the plain Cholesky succeeded and 1e-12 when the
    degenerate (rank-deficient) path had to clip eigenvalues.
    """

    factor: np.ndarray
    jitter: float


def cholesky_psd(covariance: np.ndarray) -> CholeskyResult:
    """Factor a PSD matrix, tolerating rank deficiency.

    Plain Cholesky is attempted first. On failure the matrix is rebuilt from
    its eigendecomposition with negative eigenvalues clipped at zero (they may
    not lie below -1e-10, else NotPSD), and a triangular factor is recovered
    via QR. The round-trip error ||L L^T - A||_F stays within 1e-8.
    """
    cov = _as_matrix(covariance)
    try:
        factor = np.linalg.cholesky(cov)
        return CholeskyResult(factor=factor, jitter=0.0)
    except np.linalg.LinAlgError:
        pass
    eigs, vecs = np.linalg.eigh(cov)
    if eigs.size and eigs[0] < EIG_FLOOR:
        raise NotPSD(f"minimum eigenvalue {eigs[0]:.3e} below {EIG_FLOOR:.0e}")
    root = vecs * np.sqrt(np.clip(eigs, 0.0, None))
    # A = root @ root.T; QR of root.T gives A = R.T R with R.T lower-triangular.
    _, r = np.linalg.qr(root.T)
    factor = r.T.copy()
    # Fix signs so the diagonal is nonnegative, matching Cholesky convention.
    signs = np.where(np.diag(factor) < 0.0, -1.0, 1.0)
    factor = factor * signs
    return CholeskyResult(factor=factor, jitter=_JITTER)


@dataclass(frozen=True)
class ParticleSet:
    """Joint state/disturbance draws plus the seed that produced them."""

    states: np.ndarray
    disturbances: np.ndarray
    seed: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        dists = np.asarray(self.disturbances, dtype=float)
        if states.ndim != 2 or dists.ndim != 2:
            raise DimensionMismatch("particle arrays must be 2-D (n, dim)")
        if states.shape[0] != dists.shape[0]:
            raise DimensionMismatch(
                f"state rows {states.shape[0]} != disturbance rows {dists.shape[0]}"
            )
        if states.shape[0] < 1:
            raise InvalidInput("particle set must contain at least one row")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "disturbances", dists)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.states.shape[0]


def sample_particles(
    state_belief: GaussianBelief,
    disturbance_belief: GaussianBelief,
    n: int,
    seed: int,
) -> ParticleSet:
    """Draw n i.i.d. joint (state, disturbance) samples from two Gaussians.

    The same seed always reproduces bit-identical samples. A zero covariance
    collapses every row onto the mean exactly.
    """
    if n < 1:
        raise InvalidInput(f"need n >= 1 particles, got {n}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    lx = cholesky_psd(state_belief.covariance).factor
    ld = cholesky_psd(disturbance_belief.covariance).factor
    states = state_belief.mean + rng.standard_normal((n, state_belief.dim)) @ lx.T
    dists = disturbance_belief.mean + rng.standard_normal((n, disturbance_belief.dim)) @ ld.T
    return ParticleSet(states=states, disturbances=dists, seed=seed)


def stream_seed(master_seed: int, *path: int) -> int:
    """Derive a 64-bit stream seed for a (trial, timestep, purpose, ...) path.

    Uses SeedSequence spawn keys, so distinct paths give statistically
    independent streams and the derivation is stable across platforms.
    """
    ss = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(int(p) for p in path)
    )
    return int(ss.generate_state(1, np.uint64)[0])
