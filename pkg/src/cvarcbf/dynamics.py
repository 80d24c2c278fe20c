"""Control-affine models, barrier functions, and particle propagation.

Discrete dynamics take the form x' = f(x) + g(x) u + d. Propagating a
particle cloud through them and differencing a barrier h gives per-particle
increments h(x') - decay * h(x); when h is affine those increments are
exactly affine in u, which is what lets the safety filter solve small convex
programs instead of resampling per candidate control.

The bundled ground-vehicle model comes in two coordinate systems. The center
model propagates (x, y, heading) of the vehicle center and is what the truth
simulation and estimator use. The point model propagates a reference point
offset ell ahead of the center; there both velocity and turn rate enter the
lateral dynamics, and the fence barrier (point_y <= 0) is affine, so the
filter has full control authority with exact affine increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .beliefs import GaussianBelief, ParticleSet
from .concentration import LipschitzData
from .errors import BarrierNotAffine, DimensionMismatch, InvalidInput


@dataclass(frozen=True)
class ControlAffineModel:
    """Batched control-affine dynamics x' = drift(x) + actuation(x) u + d.

    drift maps (n, state_dim) -> (n, state_dim); actuation maps
    (n, state_dim) -> (n, state_dim, control_dim). Both must return finite
    values on finite inputs. The attached Lipschitz constants are declared
    upper bounds, spot-checked in tests rather than proven.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    lipschitz: LipschitzData
    state_dim: int
    control_dim: int
    state_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def jacobian(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        """State Jacobian of x -> drift(x) + actuation(x) u at one state.

        Uses the analytic callable when provided, central differences
        otherwise.
        """
        state = np.asarray(state, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.state_jacobian is not None:
            return np.asarray(self.state_jacobian(state, u), dtype=float)
        eps = 1e-7
        jac = np.zeros((self.state_dim, self.state_dim))
        for k in range(self.state_dim):
            dx = np.zeros(self.state_dim)
            dx[k] = eps
            hi = np.atleast_2d(state + dx)
            lo = np.atleast_2d(state - dx)
            fhi = (self.drift(hi) + self.actuation(hi) @ u)[0]
            flo = (self.drift(lo) + self.actuation(lo) @ u)[0]
            jac[:, k] = (fhi - flo) / (2 * eps)
        return jac


@dataclass(frozen=True)
class BarrierFunction:
    """Scalar constraint h with h(x) <= 0 safe.

    value maps (n, state_dim) -> (n,). lipschitz_constant is a declared
    upper bound. When h is affine, normal and offset give
    h(x) = normal . x + offset and enable exact affine increments.
    """

    value: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    normal: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.lipschitz_constant < 0.0 or not math.isfinite(self.lipschitz_constant):
            raise InvalidInput(
                f"lipschitz_constant must be finite and nonnegative, "
                f"got {self.lipschitz_constant}"
            )
        if self.normal is not None:
            object.__setattr__(
                self, "normal", np.asarray(self.normal, dtype=float)
            )

    @property
    def is_affine(self) -> bool:
        return self.normal is not None


@dataclass(frozen=True)
class AffineIncrementSet:
    """Per-particle increment coefficients: increment_i(u) = a[i] + b[i] . u."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 1 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise DimensionMismatch(
                f"coefficient shapes {a.shape}, {b.shape} are inconsistent"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        return self.a + self.b @ np.asarray(u, dtype=float)


def propagate_particles(
    model: ControlAffineModel, particles: ParticleSet, u: np.ndarray
) -> np.ndarray:
    """Push every particle through the dynamics under a shared control."""
    u = np.asarray(u, dtype=float)
    if u.shape != (model.control_dim,):
        raise DimensionMismatch(
            f"control shape {u.shape} != ({model.control_dim},)"
        )
    states = particles.states
    if states.shape[1] != model.state_dim:
        raise DimensionMismatch(
            f"particle state dim {states.shape[1]} != model dim {model.state_dim}"
        )
    if particles.disturbances.shape[1] != model.state_dim:
        raise DimensionMismatch(
            f"disturbance dim {particles.disturbances.shape[1]} != "
            f"model dim {model.state_dim}"
        )
    return (
        model.drift(states)
        + model.actuation(states) @ u
        + particles.disturbances
    )


def barrier_increments(
    model: ControlAffineModel,
    barrier: BarrierFunction,
    particles: ParticleSet,
    u: np.ndarray,
    decay: float,
) -> np.ndarray:
    """Per-particle one-step barrier increments h(x') - decay * h(x)."""
    if not 0.0 <= decay <= 1.0:
        raise InvalidInput(f"decay must lie in [0, 1], got {decay}")
    successors = propagate_particles(model, particles, u)
    return barrier.value(successors) - decay * barrier.value(particles.states)


def affine_increment_coefficients(
    model: ControlAffineModel,
    barrier: BarrierFunction,
    particles: ParticleSet,
    decay: float,
) -> AffineIncrementSet:
    """Exact (a, b) with a_i + b_i . u == the barrier increment, all u.

    Requires an affine barrier. a_i collects the uncontrolled part
    c . (f(x_i) + d_i) + offset - decay * h(x_i); b_i = c^T g(x_i).
    """
    if not barrier.is_affine:
        raise BarrierNotAffine("exact increment coefficients need an affine barrier")
    if not 0.0 <= decay <= 1.0:
        raise InvalidInput(f"decay must lie in [0, 1], got {decay}")
    states = particles.states
    if states.shape[1] != model.state_dim:
        raise DimensionMismatch(
            f"particle state dim {states.shape[1]} != model dim {model.state_dim}"
        )
    c = barrier.normal
    drift_part = (model.drift(states) + particles.disturbances) @ c + barrier.offset
    current = states @ c + barrier.offset
    a = drift_part - decay * current
    b = np.einsum("nij,i->nj", model.actuation(states), c)
    return AffineIncrementSet(a=a, b=b)


@dataclass(frozen=True)
class UnicycleConfig:
    """Geometry, limits, and step size for the ground-vehicle model.

    ell is the forward offset of the controlled reference point (meters).
    wheelbase and steer_max describe the physical platform; the control box
    uses v_max and omega_max directly (omega_max is taken as given even
    where a wheelbase-based derivation would disagree; see README).
    """

    ell: float = 0.1
    v_max: float = 0.3
    omega_max: float = 0.67
    wheelbase: float = 2.5
    steer_max: float = math.radians(40.0)
    dt: float = 0.5

    def __post_init__(self):
        for name in ("ell", "v_max", "omega_max", "wheelbase", "steer_max", "dt"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0.0:
                raise InvalidInput(f"{name} must be finite and positive, got {v}")

    @property
    def control_lows(self) -> np.ndarray:
        return np.array([-self.v_max, -self.omega_max])

    @property
    def control_highs(self) -> np.ndarray:
        return np.array([self.v_max, self.omega_max])

    @property
    def control_norm_max(self) -> float:
        return math.hypot(self.v_max, self.omega_max)


def _center_actuation(cfg: UnicycleConfig) -> Callable[[np.ndarray], np.ndarray]:
    def actuation(states: np.ndarray) -> np.ndarray:
        theta = states[:, 2]
        g = np.zeros((states.shape[0], 3, 2))
        g[:, 0, 0] = np.cos(theta)
        g[:, 1, 0] = np.sin(theta)
        g[:, 2, 1] = 1.0
        return cfg.dt * g

    return actuation


def _point_actuation(cfg: UnicycleConfig) -> Callable[[np.ndarray], np.ndarray]:
    def actuation(states: np.ndarray) -> np.ndarray:
        theta = states[:, 2]
        g = np.zeros((states.shape[0], 3, 2))
        g[:, 0, 0] = np.cos(theta)
        g[:, 0, 1] = -cfg.ell * np.sin(theta)
        g[:, 1, 0] = np.sin(theta)
        g[:, 1, 1] = cfg.ell * np.cos(theta)
        g[:, 2, 1] = 1.0
        return cfg.dt * g

    return actuation


def _identity_drift(states: np.ndarray) -> np.ndarray:
    return states


def _center_jacobian(cfg: UnicycleConfig):
    def jacobian(state: np.ndarray, u: np.ndarray) -> np.ndarray:
        theta = float(state[2])
        v = float(u[0])
        jac = np.eye(3)
        jac[0, 2] = -cfg.dt * v * math.sin(theta)
        jac[1, 2] = cfg.dt * v * math.cos(theta)
        return jac

    return jacobian


def _point_jacobian_map(cfg: UnicycleConfig):
    def jacobian(state: np.ndarray, u: np.ndarray) -> np.ndarray:
        theta = float(state[2])
        v, om = float(u[0]), float(u[1])
        jac = np.eye(3)
        jac[0, 2] = cfg.dt * (-v * math.sin(theta) - cfg.ell * om * math.cos(theta))
        jac[1, 2] = cfg.dt * (v * math.cos(theta) - cfg.ell * om * math.sin(theta))
        return jac

    return jacobian


@dataclass(frozen=True)
class UnicycleModel:
    """Paired center/point models, barriers, and coordinate transforms.

    The center model propagates (x, y, heading) of the vehicle center; its
    barrier evaluates the fence at the offset point, y + ell * sin(heading),
    which is not affine in the center state. The point model propagates the
    offset point directly, where the same fence is the affine constraint
    point_y <= 0. to_point_state and point_jacobian convert center-state
    beliefs into point-state beliefs for the filter.
    """

    config: UnicycleConfig
    center_model: ControlAffineModel
    center_barrier: BarrierFunction
    point_model: ControlAffineModel
    point_barrier: BarrierFunction

    def to_point_state(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        s = np.atleast_2d(states)
        out = s.copy()
        out[:, 0] = s[:, 0] + self.config.ell * np.cos(s[:, 2])
        out[:, 1] = s[:, 1] + self.config.ell * np.sin(s[:, 2])
        return out[0] if single else out

    def point_jacobian(self, state: np.ndarray) -> np.ndarray:
        theta = float(state[2])
        ell = self.config.ell
        return np.array(
            [
                [1.0, 0.0, -ell * math.sin(theta)],
                [0.0, 1.0, ell * math.cos(theta)],
                [0.0, 0.0, 1.0],
            ]
        )

    def transform_belief(self, belief: GaussianBelief) -> GaussianBelief:
        """Push a center-state Gaussian through the point map (first order)."""
        jac = self.point_jacobian(belief.mean)
        cov = jac @ belief.covariance @ jac.T
        return GaussianBelief(
            mean=self.to_point_state(belief.mean),
            covariance=0.5 * (cov + cov.T),
        )


def unicycle_model(
    cfg: UnicycleConfig,
    decay: float = 0.2,
    scale: float = math.sqrt(2.0),
) -> UnicycleModel:
    """Build the ground-vehicle model pair with declared Lipschitz constants.

    Forward-Euler discretization at cfg.dt: the center step is
    x' = x + dt * (v cos th, v sin th, omega) + d, and the point step moves
    the offset point by dt * R(th) diag(1, ell) u + d. Lipschitz constants:
    drift is the identity (1); the actuation map varies only through th with
    chord bound dt (center) or dt * sqrt(1 + ell^2) (point); the fence
    barrier has constant sqrt(1 + ell^2) at the center and exactly 1 at the
    point.
    """
    ell = cfg.ell

    center_lip = LipschitzData(
        barrier=math.sqrt(1.0 + ell * ell),
        dynamics_state=1.0,
        dynamics_input=cfg.dt,
        input_bound=cfg.control_norm_max,
        decay=decay,
        scale=scale,
    )
    point_lip = LipschitzData(
        barrier=1.0,
        dynamics_state=1.0,
        dynamics_input=cfg.dt * math.sqrt(1.0 + ell * ell),
        input_bound=cfg.control_norm_max,
        decay=decay,
        scale=scale,
    )

    center_model = ControlAffineModel(
        drift=_identity_drift,
        actuation=_center_actuation(cfg),
        lipschitz=center_lip,
        state_dim=3,
        control_dim=2,
        state_jacobian=_center_jacobian(cfg),
    )
    point_model = ControlAffineModel(
        drift=_identity_drift,
        actuation=_point_actuation(cfg),
        lipschitz=point_lip,
        state_dim=3,
        control_dim=2,
        state_jacobian=_point_jacobian_map(cfg),
    )

    def center_fence(states: np.ndarray) -> np.ndarray:
        return states[:, 1] + ell * np.sin(states[:, 2])

    def point_fence(states: np.ndarray) -> np.ndarray:
        return states[:, 1]

    center_barrier = BarrierFunction(
        value=center_fence, lipschitz_constant=math.sqrt(1.0 + ell * ell)
    )
    point_barrier = BarrierFunction(
        value=point_fence,
        lipschitz_constant=1.0,
        normal=np.array([0.0, 1.0, 0.0]),
        offset=0.0,
    )

    return UnicycleModel(
        config=cfg,
        center_model=center_model,
        center_barrier=center_barrier,
        point_model=point_model,
        point_barrier=point_barrier,
    )
