"""Dense primal active-set solver for small projection QPs.

Problems have the form

    min ||z[:k] - center||^2   s.t.  A z <= b,  lo <= z <= hi,

where only the first k coordinates carry cost (the remaining coordinates are
epigraph or slack variables). The Hessian is therefore diagonal with a zero
block, but the reduced gradient always lies in the range of the reduced
Hessian for this cost family, so every equality-constrained subproblem has a
finite minimizer and the iteration needs no unbounded-ray handling.

Feasibility is established by a small phase-1 LP; an infeasible problem
yields a Farkas certificate (a nonnegative row combination y with
G^T y = 0 and h . y < 0) extracted from the LP duals. Constraint rows are
normalized internally so scaling rows by positive constants cannot change
the iterate path; multipliers are reported in the caller's scaling.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, InvalidInput

PRIMAL_TOL = 1e-8
STATIONARITY_TOL = 1e-6
COMPLEMENTARITY_TOL = 1e-8
ACTIVE_TOL = 1e-9


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class QpProblem:
    """Projection QP data; decision dimension may exceed the cost block.

    center: target for the first len(center) coordinates.
    a, b: inequality rows A z <= b (may be empty).
    lower, upper: per-coordinate bounds, -inf/inf allowed.
    initial_point: optional known-feasible start that skips phase 1.
    """

    center: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    initial_point: np.ndarray | None = None

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if a.size == 0:
            a = a.reshape(0, lower.shape[0] if lower.ndim == 1 else 0)
        if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
            raise DimensionMismatch(
                f"inequality shapes {a.shape}, {b.shape} are inconsistent"
            )
        dim = a.shape[1]
        if lower.shape != (dim,) or upper.shape != (dim,):
            raise DimensionMismatch(
                f"bound shapes {lower.shape}, {upper.shape} != ({dim},)"
            )
        if center.ndim != 1 or center.shape[0] > dim:
            raise DimensionMismatch(
                f"cost center of length {center.shape[0]} exceeds dimension {dim}"
            )
        if not np.all(np.isfinite(center)) or not np.all(np.isfinite(a)):
            raise InvalidInput("center and inequality rows must be finite")
        if not np.all(np.isfinite(b)):
            raise InvalidInput("inequality offsets must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise InvalidInput("bounds must not be NaN")
        if np.any(lower > upper):
            raise InvalidInput("lower bound exceeds upper bound")
        if self.initial_point is not None:
            z0 = np.asarray(self.initial_point, dtype=float)
            if z0.shape != (dim,):
                raise DimensionMismatch(
                    f"initial point shape {z0.shape} != ({dim},)"
                )
            object.__setattr__(self, "initial_point", z0)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    @property
    def cost_dim(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True)
class KktResiduals:
    primal: float
    stationarity: float
    complementarity: float


@dataclass(frozen=True)
class FarkasCertificate:
    """Nonnegative combination y of all rows with G^T y ~ 0 and h . y < 0.

    Rows follow assemble_rows order: user rows, finite upper bounds, finite
    lower bounds.
    """

    combination: np.ndarray
    gram_residual: float
    impossibility: float


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    status: QpStatus
    kkt: KktResiduals | None
    multipliers: np.ndarray | None
    farkas: FarkasCertificate | None
    iterations: int


def assemble_rows(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All inequalities as one system G z <= h: user rows, then box rows."""
    dim = problem.dim
    eye = np.eye(dim)
    hi_idx = np.where(np.isfinite(problem.upper))[0]
    lo_idx = np.where(np.isfinite(problem.lower))[0]
    g = np.vstack([problem.a, eye[hi_idx], -eye[lo_idx]])
    h = np.concatenate([problem.b, problem.upper[hi_idx], -problem.lower[lo_idx]])
    return g, h


def _phase1(g: np.ndarray, h: np.ndarray, dim: int):
    """Feasible point or Farkas multipliers via min-violation LP.

    minimize t subject to G z - t <= h, t >= 0. Zero optimum gives a
    feasible z; a positive optimum is a certificate of infeasibility whose
    duals y satisfy y >= 0, G^T y = 0, h . y = -t* < 0.
    """
    m = g.shape[0]
    cost = np.zeros(dim + 1)
    cost[-1] = 1.0
    a_ub = np.hstack([g, -np.ones((m, 1))])
    bounds = [(None, None)] * dim + [(0.0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=h, bounds=bounds, method="highs")
    if not res.success:
        raise InvalidInput(f"phase-1 LP failed: {res.message}")
    violation = float(res.fun)
    if violation <= 1e-9:
        return res.x[:dim], None
    y = np.clip(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0, None)
    total = float(y.sum())
    if total > 0.0:
        y = y / total
    return None, y


def _null_space(gw: np.ndarray, dim: int) -> np.ndarray:
    if gw.shape[0] == 0:
        return np.eye(dim)
    _, s, vt = np.linalg.svd(gw, full_matrices=True)
    tol = max(gw.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def _eqp_step(
    z: np.ndarray, c: np.ndarray, k: int, gw: np.ndarray
) -> np.ndarray:
    """Direction to the minimizer of the cost over {G_W p = 0} offsets."""
    dim = z.shape[0]
    basis = _null_space(gw, dim)
    if basis.shape[1] == 0:
        return np.zeros(dim)
    zk = basis[:k]
    hr = zk.T @ zk
    gr = zk.T @ (z[:k] - c)
    y = -np.linalg.pinv(hr, rcond=1e-12) @ gr
    return basis @ y


def solve_qp(problem: QpProblem) -> QpSolution:
    """Project the cost center onto the feasible polyhedron.

    Returns OPTIMAL with certified KKT residuals, INFEASIBLE with a Farkas
    certificate, or ITERATION_LIMIT when the active-set loop exhausts
    10 x (number of rows) steps or the final certification fails.
    """
    dim, k = problem.dim, problem.cost_dim
    c = problem.center
    g_raw, h_raw = assemble_rows(problem)
    m = g_raw.shape[0]

    # Trivially inconsistent zero rows double as an infeasibility proof.
    norms = np.linalg.norm(g_raw, axis=1)
    zero_rows = norms <= 1e-300
    if np.any(zero_rows & (h_raw < 0.0)):
        y = np.zeros(m)
        y[int(np.argmax(zero_rows & (h_raw < 0.0)))] = 1.0
        return QpSolution(
            z=np.full(dim, np.nan), status=QpStatus.INFEASIBLE, kkt=None,
            multipliers=None,
            farkas=FarkasCertificate(
                combination=y, gram_residual=0.0,
                impossibility=float(h_raw @ y),
            ),
            iterations=0,
        )

    # Row normalization: the iterate path depends only on the geometry.
    scale = np.where(zero_rows, 1.0, norms)
    g = g_raw / scale[:, None]
    h = h_raw / scale
    g[zero_rows] = 0.0

    if m == 0 or np.all(zero_rows):
        z = np.zeros(dim)
        z[:k] = c
        return QpSolution(
            z=z, status=QpStatus.OPTIMAL,
            kkt=KktResiduals(0.0, 0.0, 0.0),
            multipliers=np.zeros(problem.a.shape[0]),
            iterations=0, farkas=None,
        )

    if problem.initial_point is not None and np.all(
        g @ problem.initial_point <= h + ACTIVE_TOL
    ):
        z = problem.initial_point.copy()
    else:
        z, farkas_y = _phase1(g, h, dim)
        if z is None:
            gram = float(np.max(np.abs(g.T @ farkas_y)))
            return QpSolution(
                z=np.full(dim, np.nan), status=QpStatus.INFEASIBLE, kkt=None,
                multipliers=None,
                farkas=FarkasCertificate(
                    combination=farkas_y / scale,
                    gram_residual=gram,
                    impossibility=float(h @ farkas_y),
                ),
                iterations=0,
            )

    work = list(np.where(g @ z - h >= -ACTIVE_TOL)[0])
    in_work = np.zeros(m, dtype=bool)
    in_work[work] = True
    max_iter = 10 * m
    lam_full = np.zeros(m)
    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        gw = g[work] if work else g[:0]
        p = _eqp_step(z, c, k, gw)
        if np.max(np.abs(p), initial=0.0) <= 1e-11:
            grad = np.zeros(dim)
            grad[:k] = 2.0 * (z[:k] - c)
            if work:
                lam_w, *_ = np.linalg.lstsq(gw.T, -grad, rcond=None)
            else:
                lam_w = np.zeros(0)
            if lam_w.size == 0 or np.min(lam_w) >= -ACTIVE_TOL:
                lam_full = np.zeros(m)
                for idx, row in enumerate(work):
                    lam_full[row] = max(lam_w[idx], 0.0)
                converged = True
                break
            worst = float(np.min(lam_w))
            drop_pos = min(
                (work[i] for i in range(len(work)) if lam_w[i] <= worst + 1e-12)
            )
            work.remove(drop_pos)
            in_work[drop_pos] = False
            continue
        slack = h - g @ z
        advance = g @ p
        blocking = -1
        t = 1.0
        for i in range(m):
            if in_work[i] or advance[i] <= 1e-13:
                continue
            ti = slack[i] / advance[i]
            if ti < t - 1e-12:
                t = ti
                blocking = i
        t = max(t, 0.0)
        z = z + min(t, 1.0) * p
        if blocking >= 0:
            work.append(blocking)
            work.sort()
            in_work[blocking] = True

    if not converged:
        return QpSolution(
            z=z, status=QpStatus.ITERATION_LIMIT, kkt=None,
            multipliers=None, farkas=None, iterations=iterations,
        )

    # Certify in the caller's (unnormalized) scaling.
    lam_raw = lam_full / scale
    grad = np.zeros(dim)
    grad[:k] = 2.0 * (z[:k] - c)
    primal = float(np.max(g_raw @ z - h_raw, initial=0.0))
    stationarity = float(np.max(np.abs(grad + g_raw.T @ lam_raw)))
    comp = float(np.max(np.abs(lam_raw * (g_raw @ z - h_raw)), initial=0.0))
    kkt = KktResiduals(primal=primal, stationarity=stationarity, complementarity=comp)
    if (
        primal > PRIMAL_TOL
        or stationarity > STATIONARITY_TOL
        or comp > COMPLEMENTARITY_TOL
    ):
        return QpSolution(
            z=z, status=QpStatus.ITERATION_LIMIT, kkt=kkt,
            multipliers=None, farkas=None, iterations=iterations,
        )
    return QpSolution(
        z=z, status=QpStatus.OPTIMAL, kkt=kkt,
        multipliers=lam_raw[: problem.a.shape[0]],
        farkas=None, iterations=iterations,
    )
