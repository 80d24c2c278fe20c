"""Sub-Gaussian parameters, empirical-CDF bands, and tail corrections.

The one-step barrier increment under a Gaussian state estimate and Gaussian
disturbance is sub-Gaussian; its parameter combines barrier and dynamics
Lipschitz constants with the largest covariance eigenvalues. A
Dvoretzky-Kiefer-Wolfowitz band of half-width eps_n(delta) around the
empirical CDF then turns n samples into a distribution-free CVaR upper bound
built from three pieces: an empirical estimate, a band shift, and a
sub-Gaussian tail correction that decays like 1/sqrt(n log n).

Note on symbols: the same sub-Gaussian parameter (sigma_bar here) drives both
the increment concentration and the tail correction; some treatments write it
sigma in one place and sigma-bar in another, but there is only one quantity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EpsilonTooLarge, InvalidAlpha, InvalidInput


@dataclass(frozen=True)
class LipschitzData:
    """Lipschitz and gain constants entering the sub-Gaussian parameter.

    barrier: Lipschitz constant of the barrier function (L_h).
    dynamics_state: Lipschitz constant of the drift in the state (L_f).
    dynamics_input: operator-norm bound on the input map (L_g).
    input_bound: largest admissible input norm (u_max).
    decay: barrier decrement rate, in [0, 1].
    scale: universal sub-Gaussian proportionality constant, sqrt(2) by
        default; any value in (0, sqrt(2)] is a valid choice for Gaussian
        inputs, smaller being tighter.
    """

    barrier: float
    dynamics_state: float
    dynamics_input: float
    input_bound: float
    decay: float
    scale: float = math.sqrt(2.0)

    def __post_init__(self):
        for name in ("barrier", "dynamics_state", "dynamics_input", "input_bound"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise InvalidInput(f"{name} must be finite and nonnegative, got {v}")
        if not 0.0 <= self.decay <= 1.0:
            raise InvalidInput(f"decay must lie in [0, 1], got {self.decay}")
        if not math.isfinite(self.scale) or self.scale <= 0.0:
            raise InvalidInput(f"scale must be positive, got {self.scale}")

    def state_sensitivity(self) -> float:
        """Lipschitz constant of the one-step barrier increment in the state.

        L_h * (L_f + L_g * u_max + decay): worst-case sum of the propagated
        sensitivity and the decremented current barrier.
        """
        return self.barrier * (
            self.dynamics_state + self.dynamics_input * self.input_bound + self.decay
        )


def subgaussian_parameter(
    lip: LipschitzData,
    state_cov_max_eig: float,
    disturbance_cov_max_eig: float,
) -> float:
    """Sub-Gaussian parameter of the one-step barrier increment.

    scale * sqrt(Lx^2 * lam_x + Lh^2 * lam_d), where Lx is the state
    sensitivity, Lh the barrier constant, and lam_* the largest eigenvalues
    of the state-estimate and disturbance covariances.
    """
    for name, v in (
        ("state_cov_max_eig", state_cov_max_eig),
        ("disturbance_cov_max_eig", disturbance_cov_max_eig),
    ):
        if not math.isfinite(v) or v < 0.0:
            raise InvalidInput(f"{name} must be finite and nonnegative, got {v}")
    lx = lip.state_sensitivity()
    return lip.scale * math.sqrt(
        lx * lx * state_cov_max_eig
        + lip.barrier * lip.barrier * disturbance_cov_max_eig
    )


def dkw_epsilon(n: int, delta: float) -> float:
    """Two-sided empirical-CDF band half-width sqrt(ln(2/delta) / (2 n)).

    Holds simultaneously over the whole CDF with probability 1 - delta.
    """
    if n < 1:
        raise InvalidInput(f"need n >= 1 samples, got {n}")
    if not 0.0 < delta <= 0.5:
        raise InvalidInput(f"delta must lie in (0, 0.5], got {delta}")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def _tail_from_epsilon(sigma_bar: float, eps: float, alpha: float) -> float:
    """sigma_bar * eps / (alpha * sqrt(2 ln(1/eps))), the tail mass bound.

    Shared by tail_correction and RiskConfig.tail_term; eps must lie in
    (0, 0.5) and alpha in (0, 1).
    """
    if eps >= 0.5:
        raise EpsilonTooLarge(f"band half-width {eps:.4f} >= 0.5")
    if eps == 0.0:
        return 0.0
    return sigma_bar * eps / (alpha * math.sqrt(2.0 * math.log(1.0 / eps)))


def tail_correction(sigma_bar: float, n: int, delta: float, alpha: float) -> float:
    """Sub-Gaussian mass beyond the largest sample, scaled by 1/alpha.

    sigma_bar * eps_n(delta) / (alpha * sqrt(2 ln(1/eps_n(delta)))).

    Requires eps_n(delta) < 1/2 so the log is positive; raises
    EpsilonTooLarge otherwise (n must exceed 2 ln(2/delta)).
    """
    if not math.isfinite(sigma_bar) or sigma_bar < 0.0:
        raise InvalidInput(f"sigma_bar must be finite and nonnegative, got {sigma_bar}")
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    eps = dkw_epsilon(n, delta)
    if eps >= 0.5:
        raise EpsilonTooLarge(
            f"eps_n = {eps:.4f} >= 0.5 at n = {n}, delta = {delta}; "
            f"need n > {2.0 * math.log(2.0 / delta):.1f}"
        )
    return _tail_from_epsilon(sigma_bar, eps, alpha)


def per_step_alpha(total_risk: float, horizon: int) -> float:
    """Largest per-step risk level whose union over the horizon stays within budget.

    Solves 1 - (1 - alpha)^H = total_risk for alpha, computed as
    -expm1(log1p(-total_risk) / H) for accuracy at small risk.
    """
    if not 0.0 < total_risk < 1.0:
        raise InvalidInput(f"total_risk must lie in (0, 1), got {total_risk}")
    if horizon < 1:
        raise InvalidInput(f"horizon must be >= 1, got {horizon}")
    return -math.expm1(math.log1p(-total_risk) / horizon)


@dataclass(frozen=True)
class RiskConfig:
    """Risk budget and sample-size gates for one certified step.

    alpha: per-step CVaR tail level in (0, 1).
    delta: per-step certificate failure probability in (0, 0.5].
    n: number of particles, at least 2.
    decay: barrier decrement rate in [0, 1].
    horizon: number of steps the per-step budget must cover, >= 1.
    total_risk: whole-horizon violation budget in (0, 1).
    band_epsilon: optional explicit band half-width in [0, alpha). When set
        it replaces the distribution-free value and the feasibility gates
        are skipped, which permits degenerate configurations such as a
        zero-width band for noiseless sanity checks.

    Construction rejects alpha <= eps_n(delta) and eps_n(delta) >= 0.5, so a
    filter built on this config cannot discover mid-run that the shifted
    tail level alpha - eps has become nonpositive.
    """

    alpha: float
    delta: float
    n: int
    decay: float = 0.2
    horizon: int = 1
    total_risk: float = 0.1
    band_epsilon: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidAlpha(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta <= 0.5:
            raise InvalidInput(f"delta must lie in (0, 0.5], got {self.delta}")
        if self.n < 2:
            raise InvalidInput(f"need n >= 2 samples, got {self.n}")
        if not 0.0 <= self.decay <= 1.0:
            raise InvalidInput(f"decay must lie in [0, 1], got {self.decay}")
        if self.horizon < 1:
            raise InvalidInput(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.total_risk < 1.0:
            raise InvalidInput(f"total_risk must lie in (0, 1), got {self.total_risk}")
        if self.band_epsilon is not None:
            if not 0.0 <= self.band_epsilon < self.alpha:
                raise EpsilonTooLarge(
                    f"band_epsilon {self.band_epsilon} must lie in [0, alpha = {self.alpha})"
                )
            return
        eps = dkw_epsilon(self.n, self.delta)
        if eps >= 0.5:
            raise EpsilonTooLarge(
                f"eps_n = {eps:.4f} >= 0.5; need n > {2.0 * math.log(2.0 / self.delta):.1f}"
            )
        if eps >= self.alpha:
            raise EpsilonTooLarge(
                f"eps_n = {eps:.4f} >= alpha = {self.alpha}; increase n or alpha"
            )

    @property
    def epsilon(self) -> float:
        """Effective band half-width: the override if set, else the DKW value."""
        if self.band_epsilon is not None:
            return self.band_epsilon
        return dkw_epsilon(self.n, self.delta)

    def tail_term(self, sigma_bar: float) -> float:
        """Tail correction at this configuration; exactly 0 for a zero band."""
        if not math.isfinite(sigma_bar) or sigma_bar < 0.0:
            raise InvalidInput(
                f"sigma_bar must be finite and nonnegative, got {sigma_bar}"
            )
        return _tail_from_epsilon(sigma_bar, self.epsilon, self.alpha)
