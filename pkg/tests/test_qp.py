"""Active-set projection QP: exactness, certification, and edge cases."""
import cvxpy as cp
import numpy as np
import pytest

from cvarcbf.errors import DimensionMismatch, InvalidInput
from cvarcbf.qp import (
    COMPLEMENTARITY_TOL,
    PRIMAL_TOL,
    STATIONARITY_TOL,
    FarkasCertificate,
    QpProblem,
    QpStatus,
    assemble_rows,
    solve_qp,
)

INF = np.inf


def box_problem(center, a, b, lower=None, upper=None, **kw):
    a = np.asarray(a, dtype=float)
    dim = a.shape[1] if a.ndim == 2 else len(center)
    if lower is None:
        lower = np.full(dim, -INF)
    if upper is None:
        upper = np.full(dim, INF)
    return QpProblem(
        center=np.asarray(center, dtype=float),
        a=a.reshape(-1, dim),
        b=np.asarray(b, dtype=float),
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        **kw,
    )


def reference_objective(problem):
    """Interior-point solve of the same projection problem."""
    z = cp.Variable(problem.dim)
    k = problem.cost_dim
    constraints = []
    if problem.a.shape[0]:
        constraints.append(problem.a @ z <= problem.b)
    finite_lo = np.isfinite(problem.lower)
    finite_hi = np.isfinite(problem.upper)
    if finite_lo.any():
        constraints.append(z[finite_lo] >= problem.lower[finite_lo])
    if finite_hi.any():
        constraints.append(z[finite_hi] <= problem.upper[finite_hi])
    cost = cp.sum_squares(z[:k] - problem.center)
    prob = cp.Problem(cp.Minimize(cost), constraints)
    prob.solve(solver=cp.CLARABEL)
    assert prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE), prob.status
    return float(prob.value), np.asarray(z.value, dtype=float)


def objective(problem, z):
    k = problem.cost_dim
    return float(np.sum((z[:k] - problem.center) ** 2))


def assert_certified(problem, sol):
    assert sol.status is QpStatus.OPTIMAL
    assert sol.kkt.primal <= PRIMAL_TOL
    assert sol.kkt.stationarity <= STATIONARITY_TOL
    assert sol.kkt.complementarity <= COMPLEMENTARITY_TOL
    assert np.all(sol.multipliers >= 0.0)


class TestDirectExamples:
    def test_unconstrained_epigraph_coords_rest_at_zero(self):
        problem = box_problem([1.5, -2.0], np.zeros((0, 4)), [])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [1.5, -2.0, 0.0, 0.0], atol=0)

    def test_scalar_halfline(self):
        problem = box_problem([1.0], [[1.0]], [0.0])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        assert sol.z[0] == pytest.approx(0.0, abs=1e-12)
        assert sol.multipliers[0] == pytest.approx(2.0, rel=1e-9)

    def test_inactive_constraint_returns_center(self):
        problem = box_problem([-3.0], [[1.0]], [0.0])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        assert sol.z[0] == pytest.approx(-3.0, abs=1e-12)
        assert sol.multipliers[0] == 0.0

    def test_two_dim_corner(self):
        # Projecting (2, 2) onto the nonpositive quadrant lands on the origin.
        problem = box_problem(
            [2.0, 2.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [0.0, 0.0], atol=1e-12)

    def test_diagonal_halfspace_projection(self):
        # Euclidean projection of the origin-centered target onto
        # {x + y <= -2} is the analytic closest point.
        problem = box_problem([0.0, 0.0], [[1.0, 1.0]], [-2.0])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [-1.0, -1.0], atol=1e-10)

    def test_box_only(self):
        problem = box_problem(
            [5.0, -5.0], np.zeros((0, 2)), [],
            lower=[-1.0, -1.0], upper=[1.0, 1.0],
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [1.0, -1.0], atol=1e-12)

    def test_epigraph_variable_pushed_to_bound(self):
        # One cost coordinate plus a free scalar tied to it by a row.
        # min (u-1)^2 s.t. u - t <= 0, t <= 0.25 gives u = 0.25.
        problem = box_problem(
            [1.0], [[1.0, -1.0]], [0.0],
            lower=[-INF, -INF], upper=[INF, 0.25],
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        assert sol.z[0] == pytest.approx(0.25, abs=1e-10)


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            QpProblem(
                center=np.zeros(2), a=np.zeros((3, 2)), b=np.zeros(2),
                lower=np.full(2, -INF), upper=np.full(2, INF),
            )

    def test_center_longer_than_dim(self):
        with pytest.raises(DimensionMismatch):
            box_problem([1.0, 2.0, 3.0], [[1.0, 1.0]], [0.0])

    def test_nan_bound_rejected(self):
        with pytest.raises(InvalidInput):
            box_problem([0.0], [[1.0]], [0.0], lower=[np.nan], upper=[INF])

    def test_crossed_bounds_rejected(self):
        with pytest.raises(InvalidInput):
            box_problem([0.0], [[1.0]], [0.0], lower=[1.0], upper=[-1.0])

    def test_nonfinite_row_rejected(self):
        with pytest.raises(InvalidInput):
            box_problem([0.0], [[np.inf]], [0.0])


class TestInfeasibility:
    def test_opposing_halflines_yield_farkas(self):
        problem = box_problem([0.0], [[1.0], [-1.0]], [-1.0, -1.0])
        sol = solve_qp(problem)
        assert sol.status is QpStatus.INFEASIBLE
        cert = sol.farkas
        assert isinstance(cert, FarkasCertificate)
        g, h = assemble_rows(problem)
        y = cert.combination
        assert np.all(y >= 0.0)
        assert np.max(np.abs(g.T @ y)) <= 1e-8
        assert float(h @ y) < 0.0

    def test_zero_row_impossible(self):
        problem = box_problem([0.0, 0.0], [[0.0, 0.0]], [-0.5])
        sol = solve_qp(problem)
        assert sol.status is QpStatus.INFEASIBLE
        assert sol.farkas.combination[0] == 1.0
        assert sol.farkas.impossibility < 0.0

    def test_zero_row_vacuous_is_dropped(self):
        problem = box_problem([3.0, 4.0], [[0.0, 0.0]], [0.5])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [3.0, 4.0], atol=0)

    def test_box_conflicts_with_rows(self):
        problem = box_problem(
            [0.0], [[1.0]], [-2.0], lower=[-1.0], upper=[INF]
        )
        sol = solve_qp(problem)
        assert sol.status is QpStatus.INFEASIBLE
        g, h = assemble_rows(problem)
        y = sol.farkas.combination
        assert np.max(np.abs(g.T @ y)) <= 1e-8
        assert float(h @ y) < 0.0

    def test_farkas_residual_on_random_infeasible(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            dim = int(rng.integers(1, 4))
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            # Two shifted antipodal halfspaces with an empty gap.
            gap = float(rng.uniform(0.1, 2.0))
            a = np.vstack([direction, -direction])
            b = np.array([-gap, -gap])
            extra = rng.standard_normal((int(rng.integers(0, 4)), dim))
            offsets = rng.uniform(1.0, 3.0, size=extra.shape[0])
            problem = box_problem(
                rng.standard_normal(dim),
                np.vstack([a, extra]),
                np.concatenate([b, offsets]),
            )
            sol = solve_qp(problem)
            assert sol.status is QpStatus.INFEASIBLE
            g, h = assemble_rows(problem)
            y = sol.farkas.combination
            assert np.all(y >= 0.0)
            assert np.max(np.abs(g.T @ y)) <= 1e-8
            assert float(h @ y) < -1e-12


class TestAgainstInteriorPoint:
    def test_random_feasible_problems_match(self):
        rng = np.random.default_rng(20240517)
        for trial in range(60):
            dim = int(rng.integers(1, 4))
            m = int(rng.integers(1, 61))
            a = rng.standard_normal((m, dim))
            interior = rng.standard_normal(dim)
            b = a @ interior + rng.uniform(0.05, 2.0, size=m)
            if rng.random() < 0.5:
                lower = interior - rng.uniform(0.5, 3.0, size=dim)
                upper = interior + rng.uniform(0.5, 3.0, size=dim)
            else:
                lower = np.full(dim, -INF)
                upper = np.full(dim, INF)
            center = rng.standard_normal(dim) * 3.0
            problem = box_problem(center, a, b, lower=lower, upper=upper)
            sol = solve_qp(problem)
            assert_certified(problem, sol)
            ref_val, _ = reference_objective(problem)
            got = objective(problem, sol.z)
            assert got == pytest.approx(ref_val, rel=1e-6, abs=1e-8), trial

    def test_many_constraints_single_block(self):
        rng = np.random.default_rng(99)
        dim = 3
        m = 1000
        a = rng.standard_normal((m, dim))
        interior = np.zeros(dim)
        b = a @ interior + rng.uniform(0.01, 1.0, size=m)
        center = np.array([4.0, -4.0, 4.0])
        problem = box_problem(center, a, b)
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        ref_val, _ = reference_objective(problem)
        assert objective(problem, sol.z) == pytest.approx(ref_val, rel=1e-6)


class TestProperties:
    def test_feasible_center_is_returned_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            dim = int(rng.integers(1, 4))
            m = int(rng.integers(1, 30))
            a = rng.standard_normal((m, dim))
            center = rng.standard_normal(dim)
            b = a @ center + rng.uniform(0.01, 1.0, size=m)
            problem = box_problem(center, a, b)
            sol = solve_qp(problem)
            assert_certified(problem, sol)
            np.testing.assert_allclose(sol.z, center, atol=1e-9)

    def test_positive_row_scaling_leaves_argmin(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            dim = int(rng.integers(1, 4))
            m = int(rng.integers(1, 30))
            a = rng.standard_normal((m, dim))
            interior = rng.standard_normal(dim)
            b = a @ interior + rng.uniform(0.05, 1.5, size=m)
            center = rng.standard_normal(dim) * 2.5
            scales = rng.uniform(1e-3, 1e3, size=m)
            base = box_problem(center, a, b)
            scaled = box_problem(center, a * scales[:, None], b * scales)
            sol_base = solve_qp(base)
            sol_scaled = solve_qp(scaled)
            assert_certified(base, sol_base)
            assert_certified(scaled, sol_scaled)
            np.testing.assert_allclose(sol_base.z, sol_scaled.z, atol=1e-8)

    def test_duplicated_rows_are_harmless(self):
        problem = box_problem(
            [2.0, 2.0],
            [[1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]],
            [0.0, 0.0, 0.0, 0.0],
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [0.0, 0.0], atol=1e-10)

    def test_multipliers_reported_in_caller_scaling(self):
        # min (u-1)^2 s.t. c*u <= 0 has multiplier 2/c for scale c.
        for c in (1.0, 10.0, 0.01):
            problem = box_problem([1.0], [[c]], [0.0])
            sol = solve_qp(problem)
            assert_certified(problem, sol)
            assert sol.multipliers[0] == pytest.approx(2.0 / c, rel=1e-8)

    def test_warm_start_matches_cold(self):
        rng = np.random.default_rng(13)
        dim, m = 2, 12
        a = rng.standard_normal((m, dim))
        interior = np.array([0.3, -0.2])
        b = a @ interior + rng.uniform(0.05, 1.0, size=m)
        center = np.array([3.0, 3.0])
        cold = solve_qp(box_problem(center, a, b))
        warm = solve_qp(box_problem(center, a, b, initial_point=interior))
        assert warm.status is QpStatus.OPTIMAL
        np.testing.assert_allclose(cold.z, warm.z, atol=1e-9)

    def test_infeasible_warm_start_falls_back(self):
        problem = box_problem(
            [1.0], [[1.0]], [0.0], initial_point=np.array([5.0])
        )
        sol = solve_qp(problem)
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(0.0, abs=1e-12)


class TestDegenerate:
    def test_redundant_active_constraints_at_solution(self):
        # Three rows all active at the same vertex.
        problem = box_problem(
            [1.0, 1.0],
            [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            [0.0, 0.0, 0.0],
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        np.testing.assert_allclose(sol.z, [0.0, 0.0], atol=1e-10)

    def test_equality_encoded_as_row_pair(self):
        # u <= 0.5 and -u <= -0.5 pin the variable.
        problem = box_problem([2.0], [[1.0], [-1.0]], [0.5, -0.5])
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        assert sol.z[0] == pytest.approx(0.5, abs=1e-10)

    def test_thin_feasible_slab(self):
        problem = box_problem(
            [0.0, 4.0],
            [[0.0, 1.0], [0.0, -1.0]],
            [1e-7, 0.0],
        )
        sol = solve_qp(problem)
        assert_certified(problem, sol)
        assert 0.0 - 1e-9 <= sol.z[1] <= 1e-7 + 1e-9
