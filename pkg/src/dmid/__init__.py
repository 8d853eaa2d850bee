"""Diffusion-based image denoising via adaptive embedding and ensembling."""

__version__ = "0.1.0"

from .schedule import (  # noqa: F401
    EmbeddingPlan,
    NoiseSchedule,
    build_linear_schedule,
    default_schedule,
    select_timestep,
    sigma_t,
)
from .transform import (  # noqa: F401
    LatentImage,
    NoiseModel,
    PixelImage,
    estimate_sigma,
    from_latent,
    to_latent,
)
from .denoisers import (  # noqa: F401
    GaussianDenoiser,
    GaussianMixtureDenoiser,
    GaussianMixturePrior,
    GaussianPrior,
    PatchDctDenoiser,
    dct_denoise,
    wrap_x0_denoiser,
)
from .sampler import (  # noqa: F401
    InferenceConfig,
    accumulation_check,
    make_subsequence,
    reverse_step,
    run_inference,
)
from .ensemble import EnsembleConfig, plan_variants, run_ensemble  # noqa: F401
from .iterative import IterationSchedule, run_iterative  # noqa: F401
from .metrics import MetricReport, psnr  # noqa: F401
