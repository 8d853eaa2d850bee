"""Synthetic data generation: prior-sampled states and AWGN-corrupted images.

Used by the `synthetic` and `noise add` CLI subcommands and by the test
suite. Everything is seeded and byte-reproducible.
"""

from __future__ import annotations

import numpy as np

from .denoisers import GaussianMixturePrior, GaussianPrior
from .errors import ConfigurationError
from .transform import PixelImage


def sample_gaussian(prior: GaussianPrior, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return prior.mean + prior.std * rng.standard_normal(n)


def sample_gmm(prior: GaussianMixturePrior, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(prior.weights), size=n, p=prior.weights)
    return prior.means[comp] + prior.stds[comp] * rng.standard_normal(n)


def add_awgn(image: PixelImage, sigma: float, seed: int) -> PixelImage:
    """Additive white Gaussian noise in source units; range is not clipped
    (the declared range widens to bracket the noisy samples)."""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noisy = image.data + sigma * rng.standard_normal(image.data.shape)
    return PixelImage(data=noisy, value_range=image.value_range)


def add_poisson_gaussian(image: PixelImage, gain: float, sigma: float,
                         seed: int) -> PixelImage:
    """z = gain * Poisson(x / gain) + N(0, sigma^2), in source units."""
    if gain <= 0:
        raise ConfigurationError(f"gain must be > 0, got {gain}")
    rng = np.random.default_rng(seed)
    lam = np.maximum(image.data / gain, 0.0)
    noisy = gain * rng.poisson(lam).astype(np.float64)
    noisy += sigma * rng.standard_normal(image.data.shape)
    return PixelImage(data=noisy, value_range=image.value_range)


def test_image_128(seed: int = 7) -> PixelImage:
    """Deterministic 128x128 grayscale test scene on [0, 255].

    Smooth illumination gradient, a few flat geometric regions with sharp
    edges, a sinusoidal texture patch and a mild random texture field: enough
    structure to exercise denoisers and the blind noise estimator.
    """
    h = w = 128
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 60.0 + 80.0 * (xx / w) + 40.0 * (yy / h)

    # flat disc and rectangle with hard edges
    disc = (yy - 40.0) ** 2 + (xx - 44.0) ** 2 < 24.0 ** 2
    img[disc] = 200.0
    img[84:116, 20:72] = 35.0

    # sinusoidal texture patch
    patch = (slice(16, 56), slice(76, 120))
    img[patch] += 28.0 * np.sin(2.0 * np.pi * xx[patch] / 9.0) \
        * np.sin(2.0 * np.pi * yy[patch] / 13.0)

    # low-amplitude smooth random field (fixed seed, band-limited)
    rng = np.random.default_rng(seed)
    field = rng.standard_normal((16, 16))
    field = np.kron(field, np.ones((8, 8)))
    kernel = np.ones(9) / 9.0
    for axis in (0, 1):
        field = np.apply_along_axis(
            lambda v: np.convolve(v, kernel, mode="same"), axis, field)
    img += 10.0 * field

    return PixelImage(data=np.clip(img, 0.0, 255.0)[None], value_range=(0.0, 255.0))
