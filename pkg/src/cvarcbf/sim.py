"""Closed-loop trial execution for the geofenced unicycle study.

One trial interleaves truth propagation, measurement synthesis, extended
Kalman filtering, nominal goal seeking, and safety filtering, logging one
record per executed step. Every random draw is keyed by
(master_seed, trial_index, purpose, step) so any trial or single step can be
regenerated bit-exactly from the numbers in the logs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import GaussianBelief, cholesky_psd, sample_particles, stream_seed
from .concentration import RiskConfig, subgaussian_parameter
from .cvar import SampleVector, certified_cvar_bound, default_support_max
from .dynamics import (
    UnicycleConfig,
    UnicycleModel,
    affine_increment_coefficients,
    unicycle_model,
)
from .errors import CvarCbfError, InvalidInput
from .estimator import EkfConfig, ekf_predict, ekf_update, wrap_angle
from .safety_filter import (
    ControlBox,
    deterministic_cbf_filter,
    dkw_cbf_filter,
    filter_control,
)

_SEED_INIT = 0
_SEED_MEASUREMENT = 1
_SEED_OPTIMIZER = 2
_SEED_VERIFICATION = 3
_SEED_TRUTH = 4

SEED_PURPOSES = {
    "init": _SEED_INIT,
    "measurement": _SEED_MEASUREMENT,
    "optimizer": _SEED_OPTIMIZER,
    "verification": _SEED_VERIFICATION,
    "truth": _SEED_TRUTH,
}

MEASUREMENT_MATRIX = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class Method(enum.Enum):
    DETERMINISTIC = "det"
    DKW = "dkw"
    SUBGAUSSIAN = "subgauss"


class Outcome(enum.Enum):
    REACHED_GOAL = "reached_goal"
    VIOLATED = "violated"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class ExperimentConfig:
    """Scenario constants, risk budget, and run bookkeeping.

    Defaults reproduce the geofenced-unicycle study: start belief
    N([0, -0.5, pi/2], P0), process noise Q on all three state coordinates,
    measurements of (r_y, theta) with noise R, goal (0, -0.05) with a 0.02
    tolerance, and a 15 s horizon at dt = 0.5.
    """

    initial_mean: np.ndarray = field(
        default_factory=lambda: np.array([0.0, -0.5, math.pi / 2.0])
    )
    initial_cov: np.ndarray = field(
        default_factory=lambda: np.diag([0.02, 0.02, 0.07]) ** 2
    )
    process_cov: np.ndarray = field(
        default_factory=lambda: np.diag([0.01, 0.01, 0.05]) ** 2
    )
    measurement_cov: np.ndarray = field(
        default_factory=lambda: np.diag([0.02, 0.07]) ** 2
    )
    goal: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.05]))
    goal_tolerance: float = 0.02
    v_max: float = 0.3
    omega_max: float = 0.67
    wheelbase: float = 2.5
    steer_max_degrees: float = 40.0
    point_offset: float = 0.1
    dt: float = 0.5
    horizon_seconds: float = 15.0
    n: int = 500
    alpha: float = 0.1
    delta: float = 0.1
    gamma: float = 0.2
    # Increments here are exactly Gaussian, so the moment-generating
    # bound holds with the tight constant; sqrt(2) covers generic
    # sub-Gaussian tails and costs this scenario its goal margin.
    subgaussian_scale: float = 1.0
    k_v: float = 1.0
    k_w: float = 2.0
    trials: int = 100
    master_seed: int = 0
    methods: tuple[Method, ...] = (
        Method.DETERMINISTIC, Method.DKW, Method.SUBGAUSSIAN,
    )
    output_dir: str = "results"
    oracle_n: int = 1_000_000
    workers: int = 4

    def __post_init__(self):
        for name in (
            "initial_mean", "initial_cov", "process_cov",
            "measurement_cov", "goal",
        ):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float)
            )
        if self.initial_mean.shape != (3,) or self.goal.shape != (2,):
            raise InvalidInput("initial_mean must be length 3 and goal length 2")
        if self.trials < 0:
            raise InvalidInput(f"trials must be nonnegative, got {self.trials}")
        if self.goal_tolerance <= 0.0 or self.horizon_seconds <= 0.0:
            raise InvalidInput("goal_tolerance and horizon_seconds must be positive")
        if self.oracle_n < 10**5:
            raise InvalidInput(f"oracle_n must be at least 1e5, got {self.oracle_n}")
        if self.workers < 1:
            raise InvalidInput(f"workers must be at least 1, got {self.workers}")
        methods = tuple(
            m if isinstance(m, Method) else Method(m) for m in self.methods
        )
        object.__setattr__(self, "methods", methods)
        # Constructing the embedded configs validates every cross-field
        # invariant (risk gates, PSD requirements, positive geometry).
        self.risk()
        self.unicycle()
        self.ekf()

    @property
    def steps(self) -> int:
        return int(math.ceil(self.horizon_seconds / self.dt))

    def risk(self) -> RiskConfig:
        return RiskConfig(
            alpha=self.alpha, delta=self.delta, n=self.n,
            decay=self.gamma, horizon=self.steps,
        )

    def unicycle(self) -> UnicycleConfig:
        return UnicycleConfig(
            ell=self.point_offset,
            v_max=self.v_max,
            omega_max=self.omega_max,
            wheelbase=self.wheelbase,
            steer_max=math.radians(self.steer_max_degrees),
            dt=self.dt,
        )

    def ekf(self) -> EkfConfig:
        return EkfConfig(
            process_cov=self.process_cov,
            measurement_cov=self.measurement_cov,
            initial_cov=self.initial_cov,
            measurement_matrix=MEASUREMENT_MATRIX,
            angle_rows=(1,),
        )

    def control_box(self) -> ControlBox:
        cfg = self.unicycle()
        return ControlBox(lower=cfg.control_lows, upper=cfg.control_highs)


@dataclass(frozen=True)
class StepRecord:
    """Everything logged for one executed timestep."""

    step: int
    true_state: np.ndarray
    estimated_mean: np.ndarray
    covariance: np.ndarray
    cov_trace: float
    cov_max_eig: float
    measurement: np.ndarray
    u_des: np.ndarray
    u: np.ndarray
    barrier_true: float
    barrier_true_next: float
    center_y: float
    bound: float
    empirical_cvar: float
    band_term: float
    tail_term: float
    sigma_bar: float
    feasible: bool
    fallback: bool
    verification_bound: float
    measurement_seed: int
    optimizer_seed: int
    verification_seed: int
    truth_seed: int


@dataclass(frozen=True)
class TrialLog:
    trial_index: int
    method: Method
    init_seed: int
    outcome: Outcome
    violated: bool
    center_violated: bool
    reached: bool
    first_violation_step: int | None
    initial_true_state: np.ndarray
    initially_safe: bool
    steps: tuple[StepRecord, ...]
    error: str | None = None


def nominal_pid(
    estimated_mean: np.ndarray,
    goal: np.ndarray,
    gains: tuple[float, float],
    box: ControlBox,
) -> np.ndarray:
    """Proportional speed on distance, proportional turn rate on bearing."""
    mean = np.asarray(estimated_mean, dtype=float)
    goal = np.asarray(goal, dtype=float)
    k_v, k_w = gains
    dx = goal[0] - mean[0]
    dy = goal[1] - mean[1]
    distance = math.hypot(dx, dy)
    if distance < 1e-12:
        return np.zeros(2)
    bearing = math.atan2(dy, dx)
    v = k_v * distance
    omega = k_w * wrap_angle(bearing - mean[2])
    return box.clip(np.array([v, omega]))


def _gaussian_vector(belief: GaussianBelief, seed: int) -> np.ndarray:
    """One draw from the belief, regenerable from the seed alone."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    root = cholesky_psd(belief.covariance).factor
    return belief.mean + gen.standard_normal(belief.dim) @ root.T


def _point_barrier_value(bundle: UnicycleModel, center_state: np.ndarray) -> float:
    point = bundle.to_point_state(center_state)
    return float(bundle.point_barrier.value(point[None, :])[0])


def _goal_distance(
    bundle: UnicycleModel, center_state: np.ndarray, goal: np.ndarray
) -> float:
    point = bundle.to_point_state(center_state)
    return math.hypot(point[0] - goal[0], point[1] - goal[1])


def _propagate_truth(
    bundle: UnicycleModel, state: np.ndarray, u: np.ndarray, disturbance: np.ndarray
) -> np.ndarray:
    batch = state[None, :]
    drift = bundle.center_model.drift(batch)[0]
    actuation = bundle.center_model.actuation(batch)[0]
    nxt = drift + actuation @ u + disturbance
    nxt[2] = wrap_angle(nxt[2])
    return nxt


def run_trial(
    config: ExperimentConfig,
    method: Method,
    master_seed: int,
    trial_index: int,
) -> TrialLog:
    """Execute one closed-loop trial and log every step.

    Violations are recorded but never terminate the trial; only reaching the
    goal or exhausting the horizon does. Any package error aborts the
    stepping loop and is recorded on the log.
    """
    method = Method(method)
    uni = config.unicycle()
    bundle = unicycle_model(
        uni, decay=config.gamma, scale=config.subgaussian_scale
    )
    risk = config.risk()
    ekf_cfg = config.ekf()
    box = config.control_box()
    gains = (config.k_v, config.k_w)
    disturbance_belief = GaussianBelief(
        mean=np.zeros(3), covariance=config.process_cov
    )
    noise_belief = GaussianBelief(
        mean=np.zeros(2), covariance=config.measurement_cov
    )
    process_max_eig = disturbance_belief.max_eigenvalue()

    init_seed = stream_seed(master_seed, trial_index, _SEED_INIT, 0)
    start_belief = GaussianBelief(
        mean=config.initial_mean, covariance=config.initial_cov
    )
    true_state = _gaussian_vector(start_belief, init_seed)
    initially_safe = _point_barrier_value(bundle, true_state) <= 0.0
    belief = start_belief

    records: list[StepRecord] = []
    reached = False
    error: str | None = None
    nan = float("nan")
    try:
        for step in range(config.steps):
            measurement_seed = stream_seed(
                master_seed, trial_index, _SEED_MEASUREMENT, step
            )
            optimizer_seed = stream_seed(
                master_seed, trial_index, _SEED_OPTIMIZER, step
            )
            verification_seed = stream_seed(
                master_seed, trial_index, _SEED_VERIFICATION, step
            )
            truth_seed = stream_seed(master_seed, trial_index, _SEED_TRUTH, step)
            if optimizer_seed == verification_seed:
                raise InvalidInput(
                    "optimizer and verification particle seeds collided"
                )

            noise = _gaussian_vector(noise_belief, measurement_seed)
            measurement = MEASUREMENT_MATRIX @ true_state + noise
            belief = ekf_update(belief, measurement, ekf_cfg)
            # Arrival is judged on the reference point of the freshly
            # updated estimate. The point is the regulated output (the
            # barrier constrains it, and the goal sits 0.05 m inside the
            # boundary, reachable by the point but not by a center that
            # keeps the point safe), and the x coordinate is unmeasured,
            # so only the believed position is steerable.
            if _goal_distance(bundle, belief.mean, config.goal) \
                    <= config.goal_tolerance:
                reached = True
                break
            u_des = nominal_pid(belief.mean, config.goal, gains, box)

            bound = nan
            empirical = nan
            band = nan
            tail = nan
            sigma_bar = nan
            verification_bound = nan
            fallback = False
            if method is Method.DETERMINISTIC:
                point_mean = bundle.to_point_state(belief.mean)
                u = deterministic_cbf_filter(
                    bundle.point_model, bundle.point_barrier, point_mean,
                    np.zeros(3), u_des, config.gamma, box,
                )
                # Feasibility here means the mean-decrement row held at u.
                normal = bundle.point_barrier.normal
                actuation = bundle.point_model.actuation(point_mean[None, :])[0]
                successor = (
                    float(normal @ (point_mean + actuation @ u))
                    - config.gamma * float(normal @ point_mean)
                )
                feasible = successor <= 1e-8
            else:
                point_belief = bundle.transform_belief(belief)
                particles = sample_particles(
                    point_belief, disturbance_belief, config.n, optimizer_seed
                )
                increments = affine_increment_coefficients(
                    bundle.point_model, bundle.point_barrier, particles,
                    decay=config.gamma,
                )
                if method is Method.SUBGAUSSIAN:
                    sigma_bar = subgaussian_parameter(
                        bundle.point_model.lipschitz,
                        point_belief.max_eigenvalue(),
                        process_max_eig,
                    )
                    outcome = filter_control(
                        increments, u_des, risk, sigma_bar, box
                    )
                else:
                    support = default_support_max(
                        SampleVector(increments.evaluate(box.clip(u_des)))
                    )
                    outcome = dkw_cbf_filter(
                        increments, u_des, risk, support, box
                    )
                u = outcome.u
                bound = outcome.certificate.bound
                empirical = outcome.certificate.empirical_cvar
                band = outcome.certificate.band_term
                tail = outcome.certificate.tail_term
                feasible = outcome.feasible
                fallback = outcome.fallback_used
                if method is Method.SUBGAUSSIAN:
                    fresh = sample_particles(
                        point_belief, disturbance_belief, config.n,
                        verification_seed,
                    )
                    fresh_increments = affine_increment_coefficients(
                        bundle.point_model, bundle.point_barrier, fresh,
                        decay=config.gamma,
                    )
                    verification_bound = certified_cvar_bound(
                        SampleVector(fresh_increments.evaluate(u)),
                        risk, sigma_bar,
                    ).bound

            disturbance = _gaussian_vector(disturbance_belief, truth_seed)
            barrier_now = _point_barrier_value(bundle, true_state)
            next_state = _propagate_truth(bundle, true_state, u, disturbance)
            barrier_next = _point_barrier_value(bundle, next_state)
            records.append(StepRecord(
                step=step,
                true_state=true_state,
                estimated_mean=belief.mean,
                covariance=belief.covariance,
                cov_trace=float(np.trace(belief.covariance)),
                cov_max_eig=belief.max_eigenvalue(),
                measurement=measurement,
                u_des=u_des,
                u=u,
                barrier_true=barrier_now,
                barrier_true_next=barrier_next,
                center_y=float(true_state[1]),
                bound=bound,
                empirical_cvar=empirical,
                band_term=band,
                tail_term=tail,
                sigma_bar=sigma_bar,
                feasible=bool(feasible),
                fallback=bool(fallback),
                verification_bound=verification_bound,
                measurement_seed=int(measurement_seed),
                optimizer_seed=int(optimizer_seed),
                verification_seed=int(verification_seed),
                truth_seed=int(truth_seed),
            ))
            belief = ekf_predict(belief, bundle.center_model, u, ekf_cfg)
            true_state = next_state
        else:
            if _goal_distance(bundle, belief.mean, config.goal) \
                    <= config.goal_tolerance:
                reached = True
    except CvarCbfError as exc:
        error = f"{type(exc).__name__}: {exc}"

    violated = any(r.barrier_true > 0.0 for r in records)
    first_violation = next(
        (r.step for r in records if r.barrier_true > 0.0), None
    )
    if records and records[-1].barrier_true_next > 0.0:
        violated = True
        if first_violation is None:
            first_violation = records[-1].step + 1
    # Second reading of the geofence: the vehicle center itself, not the
    # shifted point the filter enforces. After the loop true_state holds
    # the successor of the last recorded step.
    center_violated = any(r.center_y > 0.0 for r in records)
    if records and float(true_state[1]) > 0.0:
        center_violated = True
    if violated:
        outcome_flag = Outcome.VIOLATED
    elif reached:
        outcome_flag = Outcome.REACHED_GOAL
    else:
        outcome_flag = Outcome.TIMED_OUT
    return TrialLog(
        trial_index=trial_index,
        method=method,
        init_seed=int(init_seed),
        outcome=outcome_flag,
        violated=violated,
        center_violated=center_violated,
        reached=reached,
        first_violation_step=first_violation,
        initial_true_state=true_state if not records else records[0].true_state,
        initially_safe=initially_safe,
        steps=tuple(records),
        error=error,
    )
