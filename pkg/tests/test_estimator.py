import math

import numpy as np
import pytest

from cvarcbf.beliefs import GaussianBelief
from cvarcbf.concentration import LipschitzData
from cvarcbf.dynamics import ControlAffineModel, UnicycleConfig, unicycle_model
from cvarcbf.errors import (
    DimensionMismatch,
    InvalidInput,
    SingularInnovation,
)
from cvarcbf.estimator import EkfConfig, ekf_predict, ekf_update, wrap_angle

P0 = np.diag([0.02, 0.02, 0.07]) ** 2
Q = np.diag([0.01, 0.01, 0.05]) ** 2
R = np.diag([0.02, 0.07]) ** 2
H = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def unicycle_cfg():
    return EkfConfig(
        process_cov=Q,
        measurement_cov=R,
        initial_cov=P0,
        measurement_matrix=H,
        angle_rows=(1,),
    )


def linear_model(a, b):
    lip = LipschitzData(
        barrier=1.0, dynamics_state=float(np.linalg.norm(a, 2)),
        dynamics_input=0.0, input_bound=1.0, decay=0.0,
    )
    return ControlAffineModel(
        drift=lambda s: s @ a.T,
        actuation=lambda s: np.broadcast_to(b, (s.shape[0],) + b.shape),
        lipschitz=lip,
        state_dim=a.shape[0],
        control_dim=b.shape[1],
        state_jacobian=lambda x, u: a,
    )


class TestWrapAngle:
    def test_interval_convention(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
        assert wrap_angle(-3 * math.pi / 2) == pytest.approx(math.pi / 2)

    def test_idempotent_on_range(self):
        xs = np.linspace(-math.pi + 1e-9, math.pi, 100)
        np.testing.assert_allclose(wrap_angle(xs), xs, atol=1e-12)


class TestEkfConfig:
    def test_valid(self):
        cfg = unicycle_cfg()
        assert cfg.angle_rows == (1,)

    def test_requires_positive_definite_r(self):
        with pytest.raises(InvalidInput):
            EkfConfig(
                process_cov=Q, measurement_cov=np.zeros((2, 2)),
                initial_cov=P0, measurement_matrix=H,
            )

    def test_rejects_asymmetric_q(self):
        bad = Q.copy()
        bad[0, 1] = 1e-3
        with pytest.raises(InvalidInput):
            EkfConfig(
                process_cov=bad, measurement_cov=R,
                initial_cov=P0, measurement_matrix=H,
            )

    def test_shape_consistency(self):
        with pytest.raises(DimensionMismatch):
            EkfConfig(
                process_cov=Q, measurement_cov=R,
                initial_cov=P0, measurement_matrix=np.zeros((3, 3)),
            )
        with pytest.raises(InvalidInput):
            EkfConfig(
                process_cov=Q, measurement_cov=R, initial_cov=P0,
                measurement_matrix=H, angle_rows=(5,),
            )


class TestPredict:
    def test_linear_exactness_no_noise(self):
        a = np.array([[0.9, 0.1], [-0.05, 0.95]])
        b = np.array([[0.5], [0.2]])
        model = linear_model(a, b)
        cfg = EkfConfig(
            process_cov=np.zeros((2, 2)),
            measurement_cov=np.eye(1),
            initial_cov=np.eye(2),
            measurement_matrix=np.array([[1.0, 0.0]]),
        )
        belief = GaussianBelief(mean=np.array([1.0, -1.0]), covariance=np.eye(2) * 0.3)
        out = ekf_predict(belief, model, np.array([0.7]), cfg)
        np.testing.assert_allclose(out.mean, a @ belief.mean + b[:, 0] * 0.7, atol=1e-14)
        np.testing.assert_allclose(
            out.covariance, a @ belief.covariance @ a.T, atol=1e-14
        )

    def test_additive_noise_only(self):
        bundle = unicycle_model(UnicycleConfig())
        q = 0.04 * np.eye(3)
        cfg = EkfConfig(
            process_cov=q, measurement_cov=R, initial_cov=P0,
            measurement_matrix=H, angle_rows=(1,),
        )
        belief = GaussianBelief(mean=np.array([0.3, -0.2, 0.5]), covariance=P0)
        out = ekf_predict(belief, bundle.center_model, np.zeros(2), cfg)
        # Zero control freezes the unicycle: Jacobian is the identity.
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-14)
        np.testing.assert_allclose(out.covariance, P0 + q, atol=1e-14)

    def test_unicycle_jacobian_heading_column(self):
        # Increment part of the heading column is dt * [-v sin th, v cos th, 0];
        # the full one-step map adds the identity on top.
        bundle = unicycle_model(UnicycleConfig())
        u = np.array([0.3, 0.0])
        jac = bundle.center_model.jacobian(
            np.array([0.0, 0.0, math.pi / 2]), u
        )
        np.testing.assert_allclose(
            jac[:, 2] - np.array([0.0, 0.0, 1.0]), [-0.15, 0.0, 0.0], atol=1e-15
        )

    def test_jacobian_finite_difference_agreement(self):
        bundle = unicycle_model(UnicycleConfig())
        rng = np.random.default_rng(11)
        for model in (bundle.center_model, bundle.point_model):
            for _ in range(10):
                x = rng.uniform(-2, 2, size=3)
                u = rng.uniform(-0.5, 0.5, size=2)
                analytic = model.jacobian(x, u)
                fd_model = ControlAffineModel(
                    drift=model.drift, actuation=model.actuation,
                    lipschitz=model.lipschitz, state_dim=3, control_dim=2,
                )
                np.testing.assert_allclose(
                    analytic, fd_model.jacobian(x, u), atol=1e-5
                )


class TestUpdate:
    def test_scalar_hand_example(self):
        cfg = EkfConfig(
            process_cov=np.zeros((1, 1)),
            measurement_cov=np.eye(1),
            initial_cov=np.eye(1),
            measurement_matrix=np.eye(1),
        )
        belief = GaussianBelief(mean=np.array([0.0]), covariance=np.eye(1))
        out = ekf_update(belief, np.array([2.0]), cfg)
        assert out.mean[0] == pytest.approx(1.0, abs=1e-14)
        assert out.covariance[0, 0] == pytest.approx(0.5, abs=1e-14)

    def test_perfect_measurement_limit(self):
        cfg = EkfConfig(
            process_cov=Q,
            measurement_cov=1e-12 * np.eye(2),
            initial_cov=P0,
            measurement_matrix=H,
            angle_rows=(1,),
        )
        belief = GaussianBelief(
            mean=np.array([0.1, -0.5, 1.4]), covariance=P0
        )
        y = np.array([-0.43, 1.52])
        out = ekf_update(belief, y, cfg)
        assert out.mean[1] == pytest.approx(y[0], abs=1e-6)
        assert out.mean[2] == pytest.approx(y[1], abs=1e-6)

    def test_zero_measurement_matrix_is_no_op(self):
        cfg = EkfConfig(
            process_cov=Q, measurement_cov=R, initial_cov=P0,
            measurement_matrix=np.zeros((2, 3)),
        )
        belief = GaussianBelief(mean=np.array([0.1, -0.5, 1.4]), covariance=P0)
        out = ekf_update(belief, np.array([3.0, -3.0]), cfg)
        np.testing.assert_allclose(out.mean, belief.mean, atol=1e-15)
        np.testing.assert_allclose(out.covariance, belief.covariance, atol=1e-15)

    def test_singular_innovation(self):
        # A barely-negative belief eigenvalue (allowed by the PSD floor)
        # overwhelms a tiny measurement noise: S loses positive
        # definiteness and the update must refuse.
        cfg = EkfConfig(
            process_cov=np.zeros((3, 3)),
            measurement_cov=np.array([[1e-12]]),
            initial_cov=np.eye(3),
            measurement_matrix=np.array([[0.0, 1.0, 0.0]]),
        )
        belief = GaussianBelief(
            mean=np.zeros(3), covariance=np.diag([1.0, -5e-11, 1.0])
        )
        with pytest.raises(SingularInnovation):
            ekf_update(belief, np.array([0.0]), cfg)

    def test_innovation_wrap_near_branch_cut(self):
        cfg = unicycle_cfg()
        belief = GaussianBelief(
            mean=np.array([0.0, 0.0, math.pi - 0.05]), covariance=P0
        )
        # Sensor reports the same physical heading wrapped the other way.
        y = np.array([0.0, -math.pi + 0.05])
        out = ekf_update(belief, y, cfg)
        # A naive update would yank the heading toward -pi; the wrapped
        # innovation is only 0.1 rad.
        assert abs(out.mean[2] - (math.pi - 0.05)) < 0.2

    def test_wrapped_innovation_magnitude(self):
        cfg = unicycle_cfg()
        rng = np.random.default_rng(17)
        for _ in range(50):
            theta = math.pi * rng.choice([-1, 1]) + rng.normal(0, 0.1)
            belief = GaussianBelief(
                mean=np.array([0.0, 0.0, theta]), covariance=P0
            )
            y = np.array([0.0, wrap_angle(theta + rng.normal(0, 0.2))])
            innovation = wrap_angle(y[1] - belief.mean[2])
            assert abs(innovation) <= math.pi


class TestInvariants:
    def test_covariance_stays_symmetric_psd(self):
        bundle = unicycle_model(UnicycleConfig())
        cfg = unicycle_cfg()
        rng = np.random.default_rng(23)
        belief = GaussianBelief(
            mean=np.array([0.0, -0.5, math.pi / 2]), covariance=P0
        )
        for _ in range(30):
            u = rng.uniform(-0.3, 0.3, size=2)
            belief = ekf_predict(belief, bundle.center_model, u, cfg)
            y = H @ belief.mean + rng.multivariate_normal(np.zeros(2), R)
            belief = ekf_update(belief, y, cfg)
            asym = np.max(np.abs(belief.covariance - belief.covariance.T))
            assert asym <= 1e-14
            assert np.linalg.eigvalsh(belief.covariance)[0] >= -1e-12

    def test_matches_direct_kalman_filter_linear_system(self):
        # Hand-rolled Kalman filter on a linear system agrees to 1e-10
        # over 100 steps.
        a = np.array([[0.95, 0.1], [-0.08, 0.9]])
        b = np.array([[0.5], [0.25]])
        h = np.array([[1.0, 0.3]])
        q = np.diag([0.01, 0.02])
        r = np.array([[0.05]])
        model = linear_model(a, b)
        cfg = EkfConfig(
            process_cov=q, measurement_cov=r,
            initial_cov=np.eye(2), measurement_matrix=h,
        )
        rng = np.random.default_rng(29)
        belief = GaussianBelief(mean=np.zeros(2), covariance=np.eye(2))
        mean, cov = np.zeros(2), np.eye(2)
        for _ in range(100):
            u = rng.uniform(-1, 1, size=1)
            y = rng.normal(0.0, 1.0, size=1)
            belief = ekf_predict(belief, model, u, cfg)
            belief = ekf_update(belief, y, cfg)
            mean = a @ mean + b[:, 0] * u[0]
            cov = a @ cov @ a.T + q
            s = h @ cov @ h.T + r
            k = cov @ h.T @ np.linalg.inv(s)
            mean = mean + (k @ (y - h @ mean))
            ikh = np.eye(2) - k @ h
            cov = ikh @ cov @ ikh.T + k @ r @ k.T
            np.testing.assert_allclose(belief.mean, mean, atol=1e-10)
            np.testing.assert_allclose(belief.covariance, cov, atol=1e-10)
