"""Exception hierarchy shared across the engine.

Each class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class DmidError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(DmidError):
    """Invalid parameter combination (bad schedule bounds, bad grids, ...)."""


class SaturationError(DmidError):
    """Requested noise level exceeds the maximum the schedule can absorb."""

    def __init__(self, sigma_latent: float, max_sigma: float):
        self.sigma_latent = sigma_latent
        self.max_sigma = max_sigma
        super().__init__(
            f"noise level {sigma_latent:.6g} exceeds the maximum representable "
            f"level {max_sigma:.6g} (latent units)"
        )


class ImageSizeError(DmidError):
    """Image too small for the requested operation."""


class ImageFormatError(DmidError):
    """Unreadable or malformed image file."""
