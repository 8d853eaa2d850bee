"""Range normalization into the model's [-1, 1] domain, variance-stabilizing
transforms for Poisson-Gaussian noise, and a blind noise-level estimator.

For additive Gaussian noise the latent map is the plain affine rescale of the
declared pixel range onto [-1, 1]. For Poisson-Gaussian noise the generalized
Anscombe transform is applied first, which renders the noise approximately
unit-std Gaussian; the affine map then rescales the transform's output range.
No clipping happens on the way in -- the diffusion marginal expects unclipped
Gaussian tails -- and the inverse clips only at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .errors import ConfigurationError, ImageSizeError

GAUSSIAN = "additive-gaussian"
POISSON_GAUSSIAN = "poisson-gaussian"


@dataclass(frozen=True)
class PixelImage:
    """Planar float image with a declared value range (e.g. (0, 255))."""

    data: np.ndarray  # shape (channels, height, width), float64
    value_range: tuple[float, float]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def span(self) -> float:
        return self.value_range[1] - self.value_range[0]


@dataclass(frozen=True)
class LatentImage:
    """Image in the model's [-1, 1] domain with its latent-units noise std."""

    data: np.ndarray  # shape (channels, height, width), float64
    sigma_latent: float


@dataclass(frozen=True)
class NoiseModel:
    kind: str                  # GAUSSIAN or POISSON_GAUSSIAN
    sigma: float               # Gaussian std in source units
    gain: float = 1.0          # Poisson scaling, poisson-gaussian only

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, POISSON_GAUSSIAN):
            raise ConfigurationError(f"unknown noise model kind: {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == POISSON_GAUSSIAN and self.gain <= 0:
            raise ConfigurationError(f"gain must be > 0, got {self.gain}")


# ---------------------------------------------------------------------------
# Generalized Anscombe transform


def gat_forward(z: np.ndarray, gain: float, sigma: float) -> np.ndarray:
    """Generalized Anscombe transform of z = gain*Poisson + N(0, sigma^2).

    f(z) = (2/gain) * sqrt(gain*z + 3/8 gain^2 + sigma^2); the output noise
    std is approximately 1 wherever the radicand stays positive.
    """
    rad = gain * np.asarray(z, dtype=np.float64) + 0.375 * gain * gain + sigma * sigma
    return (2.0 / gain) * np.sqrt(np.maximum(rad, 0.0))


def gat_inverse_unbiased(D: np.ndarray, gain: float, sigma: float) -> np.ndarray:
    """Closed-form exact unbiased inverse of the generalized Anscombe transform.

    gat_forward outputs values in the unit-gain Anscombe domain, where the
    Poisson intensity estimate is the standard closed-form series

        lam = D^2/4 - 1/8 - (sigma/gain)^2
              + sqrt(3/2)/4 / D - 11/8 / D^2 + 5/8 sqrt(3/2) / D^3

    and the signal estimate in source units is gain*lam.
    """
    s2 = (sigma / gain) ** 2
    f = np.maximum(np.asarray(D, dtype=np.float64), 2.0 * np.sqrt(0.375 + s2))
    a = np.sqrt(1.5)
    lam = (
        0.25 * f * f
        - 0.125
        - s2
        + 0.25 * a / f
        - 1.375 / (f * f)
        + 0.625 * a / (f * f * f)
    )
    return gain * lam


# ---------------------------------------------------------------------------
# Latent mapping


def to_latent(image: PixelImage, model: NoiseModel) -> LatentImage:
    """Transform a noisy observation into the model's [-1, 1] latent domain.

    Additive Gaussian: affine rescale only; sigma_latent = 2*sigma/span.
    Poisson-Gaussian: generalized Anscombe first (unit-std noise), then the
    affine rescale of the transform's output range; sigma_latent = 2/vst_span.
    """
    lo, hi = image.value_range
    if model.kind == GAUSSIAN:
        latent = 2.0 * (image.data - lo) / (hi - lo) - 1.0
        return LatentImage(data=latent, sigma_latent=2.0 * model.sigma / (hi - lo))
    # poisson-gaussian
    vlo = float(gat_forward(np.float64(lo), model.gain, model.sigma))
    vhi = float(gat_forward(np.float64(hi), model.gain, model.sigma))
    vspan = vhi - vlo
    stabilized = gat_forward(image.data, model.gain, model.sigma)
    latent = 2.0 * (stabilized - vlo) / vspan - 1.0
    return LatentImage(data=latent, sigma_latent=2.0 / vspan)


def from_latent(latent: LatentImage, model: NoiseModel,
                target_range: tuple[float, float]) -> PixelImage:
    """Invert to_latent and clip into target_range (the only clipping step)."""
    lo, hi = target_range
    if model.kind == GAUSSIAN:
        pixels = (latent.data + 1.0) * (hi - lo) / 2.0 + lo
    else:
        vlo = float(gat_forward(np.float64(lo), model.gain, model.sigma))
        vhi = float(gat_forward(np.float64(hi), model.gain, model.sigma))
        stabilized = (latent.data + 1.0) * (vhi - vlo) / 2.0 + vlo
        pixels = gat_inverse_unbiased(stabilized, model.gain, model.sigma)
    return PixelImage(data=np.clip(pixels, lo, hi), value_range=target_range)


# ---------------------------------------------------------------------------
# Blind noise estimation

_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])
_LAPLACIAN_NORM = np.sqrt(np.sum(_LAPLACIAN ** 2))  # sqrt(20)
_MAD_TO_STD = 1.0 / 0.674489750196082  # Gaussian MAD -> std


def estimate_sigma(image: PixelImage) -> float:
    """Blind noise-std estimate in source units.

    High-frequency residual: 3x3 Laplacian response, aggregated with the
    median absolute deviation so image structure (edges) is rejected as
    outliers. Border rows/cols are dropped to avoid boundary effects.
    """
    if image.height < 16 or image.width < 16:
        raise ImageSizeError(
            f"need at least 16x16 pixels, got {image.height}x{image.width}"
        )
    responses = []
    for c in range(image.channels):
        r = convolve(image.data[c], _LAPLACIAN, mode="nearest")
        responses.append(r[1:-1, 1:-1].ravel())
    resp = np.concatenate(responses)
    mad = np.median(np.abs(resp - np.median(resp)))
    return float(mad * _MAD_TO_STD / _LAPLACIAN_NORM)
