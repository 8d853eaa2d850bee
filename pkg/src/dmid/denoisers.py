"""Pluggable denoisers for the reverse sampler.

The contract is epsilon-prediction: given the state x_t at timestep t, a
denoiser returns eps_hat of the same shape, and the implied clean estimate is

    x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t).

Three implementations are provided:

  * exact posterior-mean denoiser for a Gaussian prior (closed form MMSE),
  * exact posterior-mean denoiser for a Gaussian mixture prior,
  * an adapter wrapping any classic (image, noise_std) -> estimate denoiser,
    used with the patch-DCT hard-threshold denoiser for real images.

The Gaussian/mixture denoisers are Bayes-optimal for their priors; they play
the role a trained network would, but exactly, so sampler properties can be
checked in closed form. All denoisers reject t=0 (the eps/x0 conversion is
singular there) and are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.fft
from scipy.special import logsumexp

from .errors import ConfigurationError
from .schedule import NoiseSchedule


class DenoiserInterface(Protocol):
    def predict_eps(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        ...


def _check_t(t: int, schedule: NoiseSchedule):
    if t < 1:
        raise ConfigurationError(f"denoisers are undefined at t={t}; need t >= 1")
    if t > schedule.T:
        raise IndexError(f"timestep {t} beyond schedule T={schedule.T}")


def eps_to_x0(x_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    a = np.sqrt(schedule.alpha_bar[t])
    b = np.sqrt(1.0 - schedule.alpha_bar[t])
    return (x_t - b * eps) / a


def x0_to_eps(x_t: np.ndarray, x0: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    a = np.sqrt(schedule.alpha_bar[t])
    b = np.sqrt(1.0 - schedule.alpha_bar[t])
    return (x_t - a * x0) / b


# ---------------------------------------------------------------------------
# Gaussian prior


@dataclass(frozen=True)
class GaussianPrior:
    """x0 ~ N(mean, std^2), elementwise iid (mean may be an array)."""

    mean: float | np.ndarray
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ConfigurationError(f"prior std must be > 0, got {self.std}")


def gaussian_posterior_eps(x_t: np.ndarray, t: int, prior: GaussianPrior,
                           schedule: NoiseSchedule) -> np.ndarray:
    """Exact MMSE eps predictor under a Gaussian prior.

    The forward marginal is x_t ~ N(a*x0, b^2) with a=sqrt(alpha_bar_t),
    b=sqrt(1-alpha_bar_t); conjugacy gives

        x0_hat = mu + a s^2 / (a^2 s^2 + b^2) * (x_t - a mu)

    and eps_hat follows from the x0 -> eps conversion.
    """
    _check_t(t, schedule)
    a = np.sqrt(schedule.alpha_bar[t])
    b = np.sqrt(1.0 - schedule.alpha_bar[t])
    s2 = prior.std ** 2
    x0_hat = prior.mean + (a * s2 / (a * a * s2 + b * b)) * (x_t - a * prior.mean)
    return (x_t - a * x0_hat) / b


@dataclass(frozen=True)
class GaussianDenoiser:
    prior: GaussianPrior

    def predict_eps(self, x_t, t, schedule):
        return gaussian_posterior_eps(x_t, t, self.prior, schedule)


# ---------------------------------------------------------------------------
# Gaussian mixture prior


@dataclass(frozen=True)
class GaussianMixturePrior:
    """x0 ~ sum_k w_k N(mu_k, s_k^2), elementwise iid."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if not (w.shape == mu.shape == s.shape) or w.ndim != 1 or w.size == 0:
            raise ConfigurationError("weights/means/stds must be equal-length 1-D arrays")
        if np.any(w <= 0):
            raise ConfigurationError("mixture weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ConfigurationError(f"mixture weights must sum to 1, got {w.sum()}")
        if np.any(s <= 0):
            raise ConfigurationError("component stds must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", s)

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, float, float]]):
        w, mu, s = (np.array(v, dtype=np.float64) for v in zip(*components))
        return cls(weights=w, means=mu, stds=s)


def gmm_responsibilities(x_t: np.ndarray, t: int, prior: GaussianMixturePrior,
                         schedule: NoiseSchedule) -> np.ndarray:
    """Per-element posterior component probabilities, shape (..., K).

    r_k proportional to w_k N(x_t; a mu_k, a^2 s_k^2 + b^2), computed in
    log space with log-sum-exp stabilization.
    """
    _check_t(t, schedule)
    a = np.sqrt(schedule.alpha_bar[t])
    b2 = 1.0 - schedule.alpha_bar[t]
    x = np.asarray(x_t, dtype=np.float64)[..., None]
    var = a * a * prior.stds ** 2 + b2                      # (K,)
    log_r = (
        np.log(prior.weights)
        - 0.5 * np.log(2.0 * np.pi * var)
        - 0.5 * (x - a * prior.means) ** 2 / var
    )
    return np.exp(log_r - logsumexp(log_r, axis=-1, keepdims=True))


def gmm_posterior_eps(x_t: np.ndarray, t: int, prior: GaussianMixturePrior,
                      schedule: NoiseSchedule) -> np.ndarray:
    """Exact MMSE eps predictor under a Gaussian mixture prior.

    x0_hat = sum_k r_k * (mu_k + a s_k^2 / (a^2 s_k^2 + b^2) (x_t - a mu_k)).
    """
    _check_t(t, schedule)
    a = np.sqrt(schedule.alpha_bar[t])
    b2 = 1.0 - schedule.alpha_bar[t]
    b = np.sqrt(b2)
    x = np.asarray(x_t, dtype=np.float64)
    r = gmm_responsibilities(x, t, prior, schedule)
    var = a * a * prior.stds ** 2 + b2
    comp_means = prior.means + (a * prior.stds ** 2 / var) * (x[..., None] - a * prior.means)
    x0_hat = np.sum(r * comp_means, axis=-1)
    return (x - a * x0_hat) / b


@dataclass(frozen=True)
class GaussianMixtureDenoiser:
    prior: GaussianMixturePrior

    def predict_eps(self, x_t, t, schedule):
        return gmm_posterior_eps(x_t, t, self.prior, schedule)


# ---------------------------------------------------------------------------
# Patch-DCT hard-threshold denoiser


@dataclass(frozen=True)
class PatchDctDenoiser:
    """Overlapping-patch DCT hard thresholding.

    Coefficients with |c| < threshold_multiplier * sigma are zeroed (the DC
    coefficient is always kept); overlaps are aggregated by uniform
    averaging. Deterministic.
    """

    patch_size: int = 8
    stride: int = 4
    threshold_multiplier: float = 3.0

    def __post_init__(self):
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigurationError(
                f"need 1 <= stride <= patch_size, got stride={self.stride}, "
                f"patch_size={self.patch_size}"
            )

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return dct_denoise(x, sigma, self)


def _patch_starts(extent: int, patch: int, stride: int) -> np.ndarray:
    starts = list(range(0, extent - patch + 1, stride))
    if starts[-1] != extent - patch:
        starts.append(extent - patch)  # cover the trailing border
    return np.asarray(starts)


def dct_denoise(x: np.ndarray, sigma: float, cfg: PatchDctDenoiser | None = None) -> np.ndarray:
    """Denoise a (H, W) or (C, H, W) array by patchwise DCT hard thresholding."""
    if cfg is None:
        cfg = PatchDctDenoiser()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return np.stack([dct_denoise(c, sigma, cfg) for c in x])
    if x.ndim != 2:
        raise ConfigurationError(f"expected 2-D or 3-D array, got ndim={x.ndim}")
    p = cfg.patch_size
    h, w = x.shape
    if h < p or w < p:
        raise ConfigurationError(f"image {h}x{w} smaller than patch size {p}")

    ys = _patch_starts(h, p, cfg.stride)
    xs = _patch_starts(w, p, cfg.stride)
    # gather all patches into (n_patches, p, p)
    patches = np.empty((len(ys) * len(xs), p, p))
    k = 0
    for y0 in ys:
        for x0 in xs:
            patches[k] = x[y0:y0 + p, x0:x0 + p]
            k += 1
    coeffs = scipy.fft.dctn(patches, axes=(1, 2), norm="ortho")
    thresh = cfg.threshold_multiplier * sigma
    keep = np.abs(coeffs) >= thresh
    keep[:, 0, 0] = True  # DC always kept
    coeffs *= keep
    cleaned = scipy.fft.idctn(coeffs, axes=(1, 2), norm="ortho")

    out = np.zeros_like(x)
    weight = np.zeros_like(x)
    k = 0
    for y0 in ys:
        for x0 in xs:
            out[y0:y0 + p, x0:x0 + p] += cleaned[k]
            weight[y0:y0 + p, x0:x0 + p] += 1.0
            k += 1
    return out / weight


# ---------------------------------------------------------------------------
# Classic-denoiser adapter


@dataclass(frozen=True)
class X0DenoiserAdapter:
    """Wraps an (image, noise_std) -> estimate denoiser into the eps contract.

    At timestep t the state x_t / sqrt(alpha_bar_t) is an image whose noise
    std equals the denoising level d(t); the wrapped denoiser is applied
    there and its clean estimate converted back to eps.
    """

    denoise: Callable[[np.ndarray, float], np.ndarray]

    def predict_eps(self, x_t, t, schedule):
        _check_t(t, schedule)
        a = np.sqrt(schedule.alpha_bar[t])
        b = np.sqrt(1.0 - schedule.alpha_bar[t])
        noisy = np.asarray(x_t, dtype=np.float64) / a
        x0_hat = self.denoise(noisy, float(schedule.denoise_level[t]))
        return (x_t - a * x0_hat) / b


def wrap_x0_denoiser(d: Callable[[np.ndarray, float], np.ndarray],
                     schedule: NoiseSchedule | None = None) -> X0DenoiserAdapter:
    """Adapt a classic (noisy, sigma) -> estimate denoiser to the eps contract."""
    return X0DenoiserAdapter(denoise=d)
