"""Distortion metrics for acceptance tests and ablation sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .transform import PixelImage

#: column order of the sweep CSV; lpips/fid stay empty for external tooling.
CSV_COLUMNS = ("image_id", "sigma", "st", "rt", "gamma", "seed",
               "mse", "psnr", "wall_ms", "lpips", "fid")


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float   # dB; math.inf when the images are identical
    n: int

    @property
    def identical(self) -> bool:
        return self.mse == 0.0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: PixelImage | np.ndarray, b: PixelImage | np.ndarray,
         peak: float) -> MetricReport:
    """PSNR in dB relative to an explicit peak; never inferred from data."""
    if peak <= 0:
        raise ConfigurationError(f"peak must be > 0, got {peak}")
    da = a.data if isinstance(a, PixelImage) else np.asarray(a)
    db = b.data if isinstance(b, PixelImage) else np.asarray(b)
    err = mse(da, db)
    value = math.inf if err == 0.0 else 10.0 * math.log10(peak * peak / err)
    return MetricReport(mse=err, psnr=value, n=da.size)
