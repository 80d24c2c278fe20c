"""Certified-CVaR control filtering over affine per-particle increments.

A filter receives the affine family w_i(u) = a_i + b_i . u of barrier
increments, one per particle, and returns the control closest to the desired
one among those whose certified CVaR bound is nonpositive. For every filter
in this module the certified bound is, as a function of u, a maximum of
finitely many affine functions: sorting the increments at a point identifies
the affine piece active there, which serves as an exact cut. Projection is
therefore a small cutting-plane loop whose master problems go through the
active-set QP solver, and the loop terminates because each unsatisfied
iterate contributes a new piece.

The full epigraph formulation in (u, theta, s) is assembled by
full_qp_problem for cross-checking; the cutting-plane path is the production
one because it keeps the QP dimension at the control dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .concentration import RiskConfig
from .cvar import (
    CvarCertificate,
    SampleVector,
    certified_cvar_bound,
    empirical_cvar_sorted,
    shifted_cvar_sorted,
)
from .dynamics import AffineIncrementSet, BarrierFunction, ControlAffineModel
from .errors import (
    BarrierNotAffine,
    DimensionMismatch,
    InvalidInput,
    SolverFailure,
)
from .qp import QpProblem, QpStatus, solve_qp

FEASIBLE_BOUND_TOL = 1e-8
CUT_TOL = 1e-10
CUT_CAP = 200


@dataclass(frozen=True)
class ControlBox:
    """Axis-aligned admissible control set; both faces must be finite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise DimensionMismatch(
                f"box face shapes {lower.shape}, {upper.shape} differ"
            )
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidInput("control box faces must be finite")
        if np.any(lower > upper):
            raise InvalidInput("control box lower face exceeds upper face")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class FilterOutcome:
    """Filtered control plus the certificate recomputed at that control.

    feasible means the certificate bound is nonpositive (within 1e-8) and,
    for truncation-based filters, that the declared support was honored.
    fallback_used marks controls chosen by bound minimization after the
    certified set proved empty.
    """

    u: np.ndarray
    certificate: CvarCertificate
    feasible: bool
    fallback_used: bool
    solve_status: str
    iterations: int = 0


@dataclass(frozen=True)
class AffineControlTerm:
    """Control-dependent part of a separable increment: offset + gradient . u."""

    gradient: np.ndarray
    offset: float

    def __post_init__(self):
        gradient = np.asarray(self.gradient, dtype=float)
        if gradient.ndim != 1 or not np.all(np.isfinite(gradient)):
            raise InvalidInput("gradient must be a finite vector")
        if not math.isfinite(self.offset):
            raise InvalidInput("offset must be finite")
        object.__setattr__(self, "gradient", gradient)

    def evaluate(self, u: np.ndarray) -> float:
        return float(self.offset + self.gradient @ np.asarray(u, dtype=float))


_WEIGHT_CACHE: dict[tuple[int, float, float], np.ndarray] = {}


def spectral_weights(n: int, alpha: float, shift: float) -> np.ndarray:
    """Order-statistic weights: lam . sort(w) == shifted_cvar(w, alpha, shift).

    The weights are nonnegative, sum to one, and are nondecreasing from the
    smallest order statistic to the largest, which is what makes the sorted
    inner product the maximum over all orderings and hence convex in u for
    affine w(u).
    """
    if n < 2:
        raise InvalidInput(f"need n >= 2 samples, got {n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= shift < alpha:
        raise InvalidInput(f"shift must lie in [0, alpha = {alpha}), got {shift}")
    key = (n, float(alpha), float(shift))
    cached = _WEIGHT_CACHE.get(key)
    if cached is not None:
        return cached
    ranks = np.arange(1, n, dtype=float) / n
    caps = np.clip(ranks - shift - (1.0 - alpha), 0.0, None)
    lam = np.empty(n)
    lam[0] = caps[0] / alpha
    lam[1:-1] = np.diff(caps) / alpha
    lam[-1] = 1.0 - caps[-1] / alpha
    lam = np.clip(lam, 0.0, None)
    _WEIGHT_CACHE[key] = lam
    return lam


def _support_cut(
    increments: AffineIncrementSet,
    u: np.ndarray,
    lam: np.ndarray,
    constant: float,
) -> tuple[float, np.ndarray, float]:
    """Bound value at u and the affine piece (p, q) active there.

    The piece satisfies p . v + q <= bound(v) for every v, with equality
    at u.
    """
    w = increments.evaluate(u)
    order = np.argsort(w, kind="stable")
    value = float(lam @ w[order]) + constant
    p = lam @ increments.b[order]
    q = float(lam @ increments.a[order]) + constant
    return value, p, q


def _master_problem(
    u_des: np.ndarray, cuts: list[tuple[np.ndarray, float]], box: ControlBox
) -> QpProblem:
    a = np.vstack([p for p, _ in cuts])
    b = np.array([-q for _, q in cuts])
    return QpProblem(
        center=u_des, a=a, b=b, lower=box.lower, upper=box.upper
    )


def _minimize_bound(
    increments: AffineIncrementSet,
    box: ControlBox,
    lam: np.ndarray,
    constant: float,
    cuts: list[tuple[np.ndarray, float]],
) -> tuple[np.ndarray, int]:
    """Cutting-plane minimization of the bound over the box (epigraph LP)."""
    dim = box.dim
    cost = np.zeros(dim + 1)
    cost[-1] = 1.0
    bounds = [(lo, hi) for lo, hi in zip(box.lower, box.upper)] + [(None, None)]
    # The gap cannot close below the LP oracle's feasibility tolerance, so
    # the LP runs tighter than the relative gap target below.
    options = {
        "primal_feasibility_tolerance": 1e-10,
        "dual_feasibility_tolerance": 1e-10,
    }
    best_value = math.inf
    best_u = box.clip(np.zeros(dim))
    for iteration in range(1, CUT_CAP + 1):
        a_ub = np.hstack([
            np.vstack([p for p, _ in cuts]),
            -np.ones((len(cuts), 1)),
        ])
        b_ub = np.array([-q for _, q in cuts])
        res = linprog(
            cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs",
            options=options,
        )
        if not res.success:
            raise SolverFailure(f"bound-minimization LP failed: {res.message}")
        u = res.x[:dim]
        lower_estimate = float(res.x[-1])
        value, p, q = _support_cut(increments, u, lam, constant)
        if value < best_value:
            best_value = value
            best_u = u
        if best_value - lower_estimate <= 1e-9 * max(1.0, abs(best_value)):
            return box.clip(best_u), iteration
        cuts.append((p, q))
    raise SolverFailure(
        f"bound minimization did not close its gap within {CUT_CAP} cuts"
    )


def _project_onto_bound(
    increments: AffineIncrementSet,
    u_des: np.ndarray,
    box: ControlBox,
    lam: np.ndarray,
    constant: float,
) -> tuple[np.ndarray, str, int, bool]:
    """Closest box control with bound <= 0, or the bound minimizer."""
    u0 = box.clip(u_des)
    value, p, q = _support_cut(increments, u0, lam, constant)
    if value <= 0.0:
        return u0, "inactive", 0, False
    cuts = [(p, q)]
    for iteration in range(1, CUT_CAP + 1):
        sol = solve_qp(_master_problem(u_des, cuts, box))
        if sol.status is QpStatus.INFEASIBLE:
            u, extra = _minimize_bound(increments, box, lam, constant, cuts)
            return u, "fallback_minimum", iteration + extra, True
        if sol.status is not QpStatus.OPTIMAL:
            raise SolverFailure(
                f"projection master returned {sol.status.value} after "
                f"{sol.iterations} active-set steps"
            )
        u = sol.z
        value, p, q = _support_cut(increments, u, lam, constant)
        if value <= CUT_TOL:
            return box.clip(u), "optimal", iteration, False
        cuts.append((p, q))
    raise SolverFailure(f"projection did not converge within {CUT_CAP} cuts")


def _check_filter_inputs(
    increments: AffineIncrementSet,
    u_des: np.ndarray,
    cfg: RiskConfig,
    box: ControlBox,
) -> np.ndarray:
    u_des = np.asarray(u_des, dtype=float)
    if increments.n != cfg.n:
        raise DimensionMismatch(
            f"{increments.n} increments, but the risk config expects {cfg.n}"
        )
    n_u = increments.b.shape[1]
    if u_des.shape != (n_u,) or box.dim != n_u:
        raise DimensionMismatch(
            f"control dimension mismatch: increments {n_u}, "
            f"u_des {u_des.shape}, box {box.dim}"
        )
    if not np.all(np.isfinite(u_des)):
        raise InvalidInput("u_des must be finite")
    return u_des


def filter_control(
    increments: AffineIncrementSet,
    u_des: np.ndarray,
    cfg: RiskConfig,
    sigma_bar: float,
    box: ControlBox,
) -> FilterOutcome:
    """Minimal-deviation control whose certified CVaR bound is nonpositive.

    The enforced constraint at each u is
    shifted_cvar(w(u), alpha, eps) + tail_term(sigma_bar) <= 0, equal to the
    optimal value of the epigraph system built by full_qp_problem. When no
    box control satisfies it, the returned control minimizes the bound and
    fallback_used is set.
    """
    u_des = _check_filter_inputs(increments, u_des, cfg, box)
    lam = spectral_weights(cfg.n, cfg.alpha, cfg.epsilon)
    constant = cfg.tail_term(sigma_bar)
    u, status, iterations, fallback = _project_onto_bound(
        increments, u_des, box, lam, constant
    )
    certificate = certified_cvar_bound(
        SampleVector(increments.evaluate(u)), cfg, sigma_bar
    )
    return FilterOutcome(
        u=u,
        certificate=certificate,
        feasible=certificate.bound <= FEASIBLE_BOUND_TOL,
        fallback_used=fallback,
        solve_status=status,
        iterations=iterations,
    )


def filter_control_separable(
    a_of_u: AffineControlTerm,
    b_samples: SampleVector,
    u_des: np.ndarray,
    cfg: RiskConfig,
    sigma_bar: float,
    box: ControlBox,
) -> FilterOutcome:
    """Separable fast path: one linear constraint when w(u) = a(u) + b_i.

    The certified bound splits as a(u) + [certified bound of the b samples],
    so the projection is onto a single half-space intersected with the box.
    """
    u_des = np.asarray(u_des, dtype=float)
    n_u = a_of_u.gradient.shape[0]
    if u_des.shape != (n_u,) or box.dim != n_u:
        raise DimensionMismatch(
            f"control dimension mismatch: gradient {n_u}, "
            f"u_des {u_des.shape}, box {box.dim}"
        )
    environment = certified_cvar_bound(b_samples, cfg, sigma_bar)
    level = a_of_u.offset + environment.bound
    gradient = a_of_u.gradient
    fallback = False
    status = "optimal"
    iterations = 0
    if float(np.max(np.abs(gradient))) <= 1e-300:
        u = box.clip(u_des)
        status = "inactive" if level <= FEASIBLE_BOUND_TOL else "fallback_minimum"
        fallback = level > FEASIBLE_BOUND_TOL
    else:
        u0 = box.clip(u_des)
        if gradient @ u0 + level <= 0.0:
            u = u0
            status = "inactive"
        else:
            sol = solve_qp(QpProblem(
                center=u_des,
                a=gradient[None, :],
                b=np.array([-level]),
                lower=box.lower,
                upper=box.upper,
            ))
            iterations = sol.iterations
            if sol.status is QpStatus.INFEASIBLE:
                u = np.where(gradient > 0.0, box.lower, box.upper)
                fallback = True
                status = "fallback_minimum"
            elif sol.status is QpStatus.OPTIMAL:
                u = sol.z
            else:
                raise SolverFailure(
                    f"separable projection returned {sol.status.value}"
                )
    certificate = certified_cvar_bound(
        SampleVector(a_of_u.evaluate(u) + b_samples.values), cfg, sigma_bar
    )
    return FilterOutcome(
        u=u,
        certificate=certificate,
        feasible=certificate.bound <= FEASIBLE_BOUND_TOL,
        fallback_used=fallback,
        solve_status=status,
        iterations=iterations,
    )


def deterministic_cbf_filter(
    model: ControlAffineModel,
    barrier: BarrierFunction,
    mean_state: np.ndarray,
    mean_disturbance: np.ndarray,
    u_des: np.ndarray,
    gamma: float,
    box: ControlBox,
) -> np.ndarray:
    """Mean-dynamics decrement filter: h(successor of the mean) <= gamma h(mean).

    Uncertainty-blind baseline. Requires an affine barrier so the constraint
    is linear in u; infeasibility returns the box control minimizing the
    constraint value.
    """
    if not barrier.is_affine:
        raise BarrierNotAffine("the decrement constraint needs an affine barrier")
    if not math.isfinite(gamma):
        raise InvalidInput(f"gamma must be finite, got {gamma}")
    mean_state = np.asarray(mean_state, dtype=float)
    mean_disturbance = np.asarray(mean_disturbance, dtype=float)
    u_des = np.asarray(u_des, dtype=float)
    if not (
        np.all(np.isfinite(mean_state))
        and np.all(np.isfinite(mean_disturbance))
        and np.all(np.isfinite(u_des))
    ):
        raise InvalidInput("filter inputs must be finite")
    normal = barrier.normal
    drift = model.drift(mean_state[None, :])[0]
    actuation = model.actuation(mean_state[None, :])[0]
    row = normal @ actuation
    offset = (
        float(normal @ (drift + mean_disturbance))
        + barrier.offset
        - gamma * (float(normal @ mean_state) + barrier.offset)
    )
    u0 = box.clip(u_des)
    if row @ u0 + offset <= 0.0:
        return u0
    sol = solve_qp(QpProblem(
        center=u_des,
        a=row[None, :],
        b=np.array([-offset]),
        lower=box.lower,
        upper=box.upper,
    ))
    if sol.status is QpStatus.OPTIMAL:
        return sol.z
    if sol.status is QpStatus.INFEASIBLE:
        return np.where(row > 0.0, box.lower, box.upper)
    raise SolverFailure(f"decrement projection returned {sol.status.value}")


def dkw_cbf_filter(
    increments: AffineIncrementSet,
    u_des: np.ndarray,
    cfg: RiskConfig,
    support_max: float,
    box: ControlBox,
) -> FilterOutcome:
    """Truncation-based probabilistic filter on a declared bounded support.

    The enforced bound is shifted_cvar(w(u), alpha, eps) plus the truncation
    tail (support_max - max_i w_i(u)) * eps / alpha. The two max terms
    cancel, leaving ((alpha-eps)/alpha) * cvar_{alpha-eps}(w(u)) plus a
    constant, again a sorted inner product, so the same cutting-plane
    machinery applies with no extra conservatism.

    The certificate is only meaningful when the samples at the returned
    control respect support_max; a violation clears the feasible flag.
    """
    u_des = _check_filter_inputs(increments, u_des, cfg, box)
    if not math.isfinite(support_max):
        raise InvalidInput(f"support_max must be finite, got {support_max}")
    alpha = cfg.alpha
    eps = cfg.epsilon
    residual = alpha - eps
    lam = spectral_weights(cfg.n, residual, 0.0) * (residual / alpha)
    constant = support_max * eps / alpha
    u, status, iterations, fallback = _project_onto_bound(
        increments, u_des, box, lam, constant
    )
    w = np.sort(increments.evaluate(u))
    shifted = shifted_cvar_sorted(w, alpha, eps)
    empirical = empirical_cvar_sorted(w, alpha)
    tail = (support_max - w[-1]) * eps / alpha
    certificate = CvarCertificate(
        bound=shifted + tail,
        empirical_cvar=empirical,
        tail_term=tail,
        band_term=shifted - empirical,
        alpha=alpha,
        delta=cfg.delta,
        n=cfg.n,
    )
    feasible = certificate.bound <= FEASIBLE_BOUND_TOL and w[-1] <= support_max
    return FilterOutcome(
        u=u,
        certificate=certificate,
        feasible=feasible,
        fallback_used=fallback,
        solve_status=status,
        iterations=iterations,
    )


def full_qp_problem(
    increments: AffineIncrementSet,
    u_des: np.ndarray,
    cfg: RiskConfig,
    sigma_bar: float,
    box: ControlBox,
) -> QpProblem:
    """Epigraph formulation over z = (u, theta, s) for cross-checking.

    Rows, for each particle i with w_i(u) = a_i + b_i . u:
      (eps/alpha) w_i(u) + ((alpha-eps)/alpha) theta
          + (1/(n alpha)) sum_j s_j <= -tail_term
      w_i(u) - theta - s_i <= 0
    with s >= 0 and u in the box; theta is free. For fixed u the optimal
    value of the left side over (theta, s) is the certified bound at u, so
    the minimizer's u block agrees with filter_control.
    """
    u_des = _check_filter_inputs(increments, u_des, cfg, box)
    n = cfg.n
    n_u = increments.b.shape[1]
    alpha = cfg.alpha
    eps = cfg.epsilon
    tail = cfg.tail_term(sigma_bar)
    dim = n_u + 1 + n
    first = np.zeros((n, dim))
    first[:, :n_u] = (eps / alpha) * increments.b
    first[:, n_u] = (alpha - eps) / alpha
    first[:, n_u + 1:] = 1.0 / (n * alpha)
    first_rhs = -tail - (eps / alpha) * increments.a
    second = np.zeros((n, dim))
    second[:, :n_u] = increments.b
    second[:, n_u] = -1.0
    second[np.arange(n), n_u + 1 + np.arange(n)] = -1.0
    second_rhs = -increments.a
    lower = np.concatenate([box.lower, [-np.inf], np.zeros(n)])
    upper = np.concatenate([box.upper, [np.inf], np.full(n, np.inf)])
    return QpProblem(
        center=u_des,
        a=np.vstack([first, second]),
        b=np.concatenate([first_rhs, second_rhs]),
        lower=lower,
        upper=upper,
    )
