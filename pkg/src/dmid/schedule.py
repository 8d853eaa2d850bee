"""Variance-preserving noise schedule and timestep arithmetic.

Conventions: timesteps are 1-based for beta/alpha; index 0 holds a synthetic
alpha_bar_0 = 1 so the final reverse step (t=1 -> t=0) lands on a noise-free
state. All arrays have length T+1 and all arithmetic is float64.

The denoising level d(t) = sqrt(1 - alpha_bar_t) / sqrt(alpha_bar_t) is the
effective noise std (in signal units) absorbed by entering the reverse
process at timestep t; it is strictly increasing with d(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SaturationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed schedule tables. Immutable; safe to share across workers."""

    T: int
    beta: np.ndarray        # beta[0] unused (0), beta[1..T]
    alpha: np.ndarray       # alpha[t] = 1 - beta[t]; alpha[0] = 1
    alpha_bar: np.ndarray   # alpha_bar[t] = prod_{i<=t} alpha[i]; alpha_bar[0] = 1
    denoise_level: np.ndarray  # d[t] = sqrt(1 - alpha_bar[t]) / sqrt(alpha_bar[t])

    @property
    def max_embeddable_sigma(self) -> float:
        """Largest latent noise std select_timestep will accept, d(T-1)."""
        return float(self.denoise_level[self.T - 1])


@dataclass(frozen=True)
class EmbeddingPlan:
    """Where to enter the reverse chain for a given latent noise level.

    Invariant: scale**2 + (scale * matched_sigma)**2 == 1, i.e. the embedded
    state has the variance-preserving marginal of the forward process.
    """

    N: int
    scale: float           # sqrt(alpha_bar_N)
    matched_sigma: float   # d(N)


def build_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build the linear-beta schedule: beta_1 = beta_start, beta_T = beta_end."""
    if T < 2:
        raise ConfigurationError(f"need T >= 2 timesteps, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha[0] = 1.0
    alpha_bar = np.cumprod(alpha)
    alpha_bar[0] = 1.0
    d = np.sqrt(1.0 - alpha_bar) / np.sqrt(alpha_bar)
    beta.setflags(write=False)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    d.setflags(write=False)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, denoise_level=d)


def sigma_t(schedule: NoiseSchedule, t: int, gamma: float, t_prev: int | None = None) -> float:
    """Noise std of the reverse step t -> t_prev.

        sigma = gamma * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)

    gamma=0 gives the deterministic (DDIM) sampler, gamma=1 the ancestral
    variance. t_prev defaults to t-1 (adjacent step); for subsequence
    sampling the same formula is used with the two endpoint alpha_bars.
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"timestep {t} outside [1, {schedule.T}]")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise IndexError(f"t_prev={t_prev} must lie in [0, t={t})")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t_prev]
    return float(gamma * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev))


def select_timestep(schedule: NoiseSchedule, sigma_latent: float) -> EmbeddingPlan:
    """Pick N = argmin_t |d(t) - sigma_latent| over t in [0, T).

    Ties break toward smaller N (fewer reverse steps, more controllability).
    Monotone in sigma_latent. Raises SaturationError beyond d(T-1).
    """
    if sigma_latent < 0:
        raise ConfigurationError(f"sigma_latent must be >= 0, got {sigma_latent}")
    d = schedule.denoise_level
    last = schedule.T - 1
    if sigma_latent > d[last]:
        raise SaturationError(sigma_latent, float(d[last]))
    # d is strictly increasing; nearest match via bisection.
    hi = int(np.searchsorted(d[: last + 1], sigma_latent, side="left"))
    if hi == 0:
        N = 0
    else:
        lo = hi - 1
        # tie -> smaller index
        N = lo if sigma_latent - d[lo] <= d[hi] - sigma_latent else hi
    return EmbeddingPlan(
        N=N,
        scale=float(np.sqrt(schedule.alpha_bar[N])),
        matched_sigma=float(d[N]),
    )


def dump_schedule_rows(schedule: NoiseSchedule):
    """Yield (t, beta, alpha_bar, d) rows for the audit CSV."""
    for t in range(schedule.T + 1):
        yield (
            t,
            float(schedule.beta[t]),
            float(schedule.alpha_bar[t]),
            float(schedule.denoise_level[t]),
        )


def default_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """The standard 1000-step linear schedule used throughout."""
    return build_linear_schedule(T, beta_start, beta_end)
