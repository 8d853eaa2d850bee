"""Generic iterative denoising loop and its structural comparison with the
diffusion reverse step.

The loop alternates a rough clean estimate with re-injection of a weighted
copy of the original noisy image:

    x_N = y
    for t = N..1:  x0_hat = Denoiser(x_t);  x_prev = x0_hat + g_t (y - x0_hat)

Each iteration decomposes, exactly like the diffusion step, into a predicted
item (x0_hat) and an additional-noise item; the probe below reports that
decomposition side by side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .denoisers import DenoiserInterface
from .errors import ConfigurationError
from .schedule import NoiseSchedule, sigma_t
from .transform import LatentImage

ImageDenoiser = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class IterationSchedule:
    """Re-noising weights g_N ... g_1, each in [0, 1]."""

    gammas: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ConfigurationError("iteration gammas must lie in [0, 1]")

    @classmethod
    def geometric(cls, iterations: int, start: float = 1.0, end: float = 0.05):
        """Geometric decay from start to end, mimicking a coarse-to-fine run."""
        if iterations < 1:
            raise ConfigurationError(f"need >= 1 iterations, got {iterations}")
        if iterations == 1:
            return cls(gammas=(start,))
        return cls(gammas=tuple(np.geomspace(start, end, iterations)))


def run_iterative(y: LatentImage, gammas: IterationSchedule, denoiser: ImageDenoiser,
                  sigma0: float) -> LatentImage:
    """Run the iterative loop; returns the final clean estimate.

    The noise level handed to the plug-in denoiser tracks the residual noise
    in the current state: sigma0 for the first iteration (the state is y
    itself), then g * sigma0 after a re-noising with weight g. Fully
    deterministic. Empty gammas degrades to one plain denoiser call.
    """
    if not gammas.gammas:
        return LatentImage(data=denoiser(y.data, sigma0), sigma_latent=0.0)
    x = y.data
    level = sigma0
    x0_hat = x
    for g in gammas.gammas:
        x0_hat = denoiser(x, level)
        x = x0_hat + g * (y.data - x0_hat)
        level = g * sigma0
    return LatentImage(data=x0_hat, sigma_latent=0.0)


@dataclass(frozen=True)
class ProbeReport:
    """Side-by-side decomposition of one diffusion step and one iteration.

    Both routes evaluate the same denoiser at the same state, so the
    predicted items must agree to rounding; the step outputs then differ
    only through the additional-noise items (and the sqrt(ab_prev) scaling
    of the diffusion predicted item). residual is the reconstruction error
    of that decomposition and is zero up to floating rounding.
    """

    x0_max_diff: float
    diffusion_output: np.ndarray
    iterative_output: np.ndarray
    diffusion_noise_item: np.ndarray
    iterative_noise_item: np.ndarray
    residual: float


def structural_equivalence_probe(y: LatentImage, schedule: NoiseSchedule,
                                 denoiser: DenoiserInterface,
                                 image_denoiser: ImageDenoiser, t: int,
                                 t_prev: int | None = None, gamma: float = 0.0,
                                 iter_gamma: float | None = None,
                                 rng: np.random.Generator | None = None) -> ProbeReport:
    """Run one diffusion reverse step and one matched iterative step from the
    same state x_t = sqrt(alpha_bar_t) * y and report the decomposition.

    denoiser and image_denoiser must be the same underlying estimator exposed
    through the two contracts (eps prediction vs. (image, sigma) call); the
    diffusion route recovers its predicted item through the eps algebra while
    the iterative route calls the image denoiser directly at noise level
    d(t), so agreement of the two predicted items is a real check.
    """
    if t_prev is None:
        t_prev = t - 1
    a = np.sqrt(schedule.alpha_bar[t])
    b = np.sqrt(1.0 - schedule.alpha_bar[t])
    x_t = a * y.data

    eps_hat = denoiser.predict_eps(x_t, t, schedule)
    x0_hat = (x_t - b * eps_hat) / a
    x0_iter = image_denoiser(x_t / a, float(schedule.denoise_level[t]))

    ab_prev = schedule.alpha_bar[t_prev]
    sigma = sigma_t(schedule, t, gamma, t_prev=t_prev) if t_prev >= 1 else 0.0
    radicand = max(1.0 - ab_prev - sigma * sigma, 0.0)
    noise_draw = 0.0
    if sigma > 0.0:
        noise_draw = (rng or np.random.default_rng(0)).standard_normal(x_t.shape)
    diff_noise_item = np.sqrt(radicand) * eps_hat + sigma * noise_draw
    diff_out = np.sqrt(ab_prev) * x0_hat + diff_noise_item

    # matched iterative step: same predicted item, residual re-injection
    # weight defaulting to the diffusion step's residual-noise fraction.
    g = iter_gamma if iter_gamma is not None else float(np.sqrt(1.0 - ab_prev))
    iter_noise_item = g * (y.data - x0_iter)
    iter_out = x0_iter + iter_noise_item

    # decomposition consistency: the output difference must be exactly the
    # scaling mismatch of the predicted item plus the noise-item difference.
    decomposed = (np.sqrt(ab_prev) * x0_hat - x0_iter
                  + diff_noise_item - iter_noise_item)
    residual = float(np.max(np.abs((diff_out - iter_out) - decomposed)))
    return ProbeReport(
        x0_max_diff=float(np.max(np.abs(x0_hat - x0_iter))),
        diffusion_output=diff_out,
        iterative_output=iter_out,
        diffusion_noise_item=diff_noise_item,
        iterative_noise_item=iter_noise_item,
        residual=residual,
    )
