"""Adaptive ensembling: average R_t independent inference repeats.

Per-repeat seeds come from a splittable 64-bit mix of the base seed, so
repeats are reproducible under any worker count, and the average is taken by
pairwise tree summation in a fixed order, so the result is bit-identical
regardless of execution order or parallelism.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .denoisers import DenoiserInterface
from .errors import ConfigurationError
from .sampler import InferenceConfig, run_inference
from .schedule import NoiseSchedule, select_timestep
from .transform import LatentImage

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix_seed(base_seed: int, index: int) -> int:
    """SplitMix64 finalizer applied to base_seed + (index+1)*golden-ratio.

    This is the documented per-repeat seed derivation: repeat i runs with
    seed mix_seed(base, i).
    """
    z = (base_seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def tree_sum(arrays: list[np.ndarray]) -> np.ndarray:
    """Pairwise sum in fixed order; bit-reproducible for a given list order."""
    if not arrays:
        raise ConfigurationError("tree_sum of empty list")
    level = list(arrays)
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass(frozen=True)
class EnsembleConfig:
    base: InferenceConfig
    repeats: int = 1                 # R_t
    budget: int | None = None        # if set, enforce S_t * R_t == budget

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")
        if self.budget is not None and self.base.sampling_steps * self.repeats != self.budget:
            raise ConfigurationError(
                f"S_t * R_t = {self.base.sampling_steps * self.repeats} does not "
                f"match the declared budget {self.budget}"
            )


def run_ensemble(y: LatentImage, cfg: EnsembleConfig, schedule: NoiseSchedule,
                 denoiser: DenoiserInterface, jobs: int = 1) -> LatentImage:
    """Average of R_t independent inference repeats.

    With S_t = 1 the chain is deterministic, so all repeats coincide and a
    single run is performed. Repeats may run on a thread pool; the result is
    independent of jobs because outputs are combined in repeat order.
    """
    if cfg.base.sampling_steps <= 1 or cfg.repeats == 1:
        return run_inference(y, cfg.base, schedule, denoiser)

    configs = [replace(cfg.base, seed=mix_seed(cfg.base.seed, i))
               for i in range(cfg.repeats)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(
                lambda c: run_inference(y, c, schedule, denoiser).data, configs))
    else:
        outputs = [run_inference(y, c, schedule, denoiser).data for c in configs]
    mean = tree_sum(outputs) / cfg.repeats
    return LatentImage(data=mean, sigma_latent=0.0)


def plan_variants(sigma_latent: float, schedule: NoiseSchedule, seed: int = 0,
                  gamma: float = 0.85, budget: int = 1000,
                  perception_steps: int = 100) -> tuple[EnsembleConfig, EnsembleConfig]:
    """Budgeted distortion-oriented and perception-oriented configurations.

    Distortion variant: S_t * R_t = budget with S_t <= 10 (S_t = 10 unless N
    is smaller). Perception variant: R_t = 1 with a configurable S_t. Both
    are capped at S_t <= N. If the distortion S_t degenerates to 1 the
    repeats have no effect (S_t=1 is deterministic) and a warning is issued.
    """
    plan = select_timestep(schedule, sigma_latent)
    if plan.N == 0:
        noop = InferenceConfig(N=0, sampling_steps=0, gamma=gamma, seed=seed)
        return (EnsembleConfig(base=noop, repeats=1),
                EnsembleConfig(base=noop, repeats=1))

    st_d = min(10, plan.N)
    while budget % st_d:
        st_d -= 1
    rt_d = budget // st_d
    if st_d == 1:
        warnings.warn(
            "distortion variant degenerated to S_t=1: sampling is "
            "deterministic and repeats have no effect; using R_t=1",
            stacklevel=2,
        )
        rt_d = 1
    distortion = EnsembleConfig(
        base=InferenceConfig(N=plan.N, sampling_steps=st_d, gamma=gamma, seed=seed),
        repeats=rt_d,
        budget=None if rt_d == 1 else budget,
    )
    perception = EnsembleConfig(
        base=InferenceConfig(N=plan.N, sampling_steps=min(perception_steps, plan.N),
                             gamma=gamma, seed=seed),
        repeats=1,
    )
    return distortion, perception
