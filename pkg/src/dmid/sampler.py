"""Embedding into an intermediate diffusion state and reverse sampling.

A single inference embeds the transformed noisy image at timestep N,

    x_N = sqrt(alpha_bar_N) * y,

then walks a strictly decreasing timestep subsequence down to 0. Each step
t -> t_prev is the DDIM-family update

    x_prev = sqrt(ab_prev) * x0_hat
             + sqrt(1 - ab_prev - sigma^2) * eps_hat
             + sigma * eps,        eps ~ N(0, 1),

with sigma = gamma * sqrt((1-ab_prev)/(1-ab_t)) * sqrt(1 - ab_t/ab_prev).
gamma=0 is the deterministic sampler; the final step (t_prev=0, ab_0=1)
returns x0_hat exactly and draws no noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoisers import DenoiserInterface
from .errors import ConfigurationError
from .schedule import EmbeddingPlan, NoiseSchedule, sigma_t
from .transform import LatentImage


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs for one inference chain."""

    N: int                  # embedding timestep
    sampling_steps: int     # S_t, reverse steps in one inference
    gamma: float = 0.85     # stochasticity, sigma multiplier in [0, 1]
    seed: int = 0

    def __post_init__(self):
        if self.N < 0:
            raise ConfigurationError(f"N must be >= 0, got {self.N}")
        if self.N == 0:
            if self.sampling_steps != 0:
                raise ConfigurationError("N=0 requires sampling_steps=0 (no-op chain)")
        elif not 1 <= self.sampling_steps <= self.N:
            raise ConfigurationError(
                f"need 1 <= sampling_steps <= N, got S_t={self.sampling_steps}, N={self.N}"
            )
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TimestepSubsequence:
    """Strictly decreasing steps [N, ...], with an implicit terminal 0."""

    steps: tuple[int, ...]

    def transitions(self):
        """Yield (t, t_prev) pairs including the final hop to 0."""
        s = self.steps
        for i in range(len(s) - 1):
            yield s[i], s[i + 1]
        yield s[-1], 0


def make_subsequence(N: int, S_t: int) -> TimestepSubsequence:
    """Uniformly spaced decreasing subsequence of S_t steps starting at N.

    Rounding collisions are resolved by nudging entries apart (possible
    whenever S_t <= N), so the count is always preserved.
    """
    if N < 1:
        raise ConfigurationError(f"need N >= 1, got {N}")
    if not 1 <= S_t <= N:
        raise ConfigurationError(f"need 1 <= S_t <= N, got S_t={S_t}")
    vals = [int(round(v)) for v in np.linspace(N, N / S_t, S_t)]
    vals[0] = N
    for i in range(1, S_t):                      # enforce strictly decreasing
        vals[i] = min(vals[i], vals[i - 1] - 1)
    vals[-1] = max(vals[-1], 1)                  # and keep everything >= 1
    for i in range(S_t - 2, -1, -1):
        vals[i] = max(vals[i], vals[i + 1] + 1)
    assert vals[0] == N and all(a > b for a, b in zip(vals, vals[1:]))
    return TimestepSubsequence(steps=tuple(vals))


def embed(y: LatentImage, plan: EmbeddingPlan) -> np.ndarray:
    """x_N = sqrt(alpha_bar_N) * y; pure scaling, no RNG."""
    return plan.scale * y.data


@dataclass
class StepDiagnostics:
    """Counters the sampler updates in place."""

    radicand_clamps: int = 0


def reverse_step(x_t: np.ndarray, t: int, t_prev: int, denoiser: DenoiserInterface,
                 schedule: NoiseSchedule, gamma: float, rng: np.random.Generator,
                 diagnostics: StepDiagnostics | None = None) -> np.ndarray:
    """One DDIM-family reverse update t -> t_prev (see module docstring).

    A negative radicand 1 - ab_prev - sigma^2 (possible from rounding near
    t_prev=0) clamps sigma down so the radicand is 0 and bumps a diagnostic
    counter instead of failing.
    """
    if t < 1 or t_prev < 0 or t_prev >= t:
        raise ConfigurationError(f"invalid step {t} -> {t_prev}")
    eps_hat = denoiser.predict_eps(x_t, t, schedule)
    a = np.sqrt(schedule.alpha_bar[t])
    b = np.sqrt(1.0 - schedule.alpha_bar[t])
    x0_hat = (x_t - b * eps_hat) / a
    if t_prev == 0:
        return x0_hat
    sigma = sigma_t(schedule, t, gamma, t_prev=t_prev)
    ab_prev = schedule.alpha_bar[t_prev]
    radicand = 1.0 - ab_prev - sigma * sigma
    if radicand < 0.0:
        sigma = float(np.sqrt(1.0 - ab_prev))
        radicand = 0.0
        if diagnostics is not None:
            diagnostics.radicand_clamps += 1
    out = np.sqrt(ab_prev) * x0_hat + np.sqrt(radicand) * eps_hat
    if sigma > 0.0:
        out = out + sigma * rng.standard_normal(x_t.shape)
    return out


def run_inference(y: LatentImage, cfg: InferenceConfig, schedule: NoiseSchedule,
                  denoiser: DenoiserInterface,
                  diagnostics: StepDiagnostics | None = None) -> LatentImage:
    """Embed y at timestep N and sample down to a clean latent estimate.

    Deterministic given (y, cfg, schedule, denoiser); all randomness comes
    from cfg.seed via an owned Generator.
    """
    if cfg.N == 0:
        return LatentImage(data=y.data.copy(), sigma_latent=0.0)
    rng = np.random.default_rng(cfg.seed)
    plan = EmbeddingPlan(
        N=cfg.N,
        scale=float(np.sqrt(schedule.alpha_bar[cfg.N])),
        matched_sigma=float(schedule.denoise_level[cfg.N]),
    )
    x = embed(y, plan)
    for t, t_prev in make_subsequence(cfg.N, cfg.sampling_steps).transitions():
        x = reverse_step(x, t, t_prev, denoiser, schedule, cfg.gamma, rng, diagnostics)
    return LatentImage(data=x, sigma_latent=0.0)


# ---------------------------------------------------------------------------
# Accumulated-form evaluation


@dataclass
class NoiseRecord:
    """Recorded standard-normal draws so two evaluation routes can share them.

    Serialized as a little-endian raw float64 stream: draws are appended in
    chain order, flattened C-contiguous.
    """

    draws: list = field(default_factory=list)

    def tobytes(self) -> bytes:
        if not self.draws:
            return b""
        return np.concatenate([d.ravel() for d in self.draws]).astype("<f8").tobytes()

    @classmethod
    def frombytes(cls, raw: bytes, shape) -> "NoiseRecord":
        flat = np.frombuffer(raw, dtype="<f8")
        n = int(np.prod(shape))
        if len(flat) % n:
            raise ConfigurationError("noise record length not a multiple of state size")
        return cls(draws=[flat[i:i + n].reshape(shape).copy()
                          for i in range(0, len(flat), n)])


class _RecordingRng:
    """Duck-typed Generator that either records or replays standard normals."""

    def __init__(self, rng: np.random.Generator | None, record: NoiseRecord,
                 replay: bool):
        self._rng = rng
        self._record = record
        self._replay = replay
        self._cursor = 0

    def standard_normal(self, shape):
        if self._replay:
            draw = self._record.draws[self._cursor]
            self._cursor += 1
            return draw
        draw = self._rng.standard_normal(shape)
        self._record.draws.append(draw)
        return draw


def accumulation_check(y: LatentImage, cfg: InferenceConfig, schedule: NoiseSchedule,
                       denoiser: DenoiserInterface,
                       noise_record: NoiseRecord | None = None) -> float:
    """Max abs difference between iterated sampling and its accumulated form.

    Route A iterates the per-step update. Route B evaluates the same chain as
    the first-step clean prediction plus two cumulative sums -- a stochastic
    sum of the injected noises and a prediction-drift sum:

        x_0 = x0_hat(x_N, N)
              + sum_steps sigma / sqrt(ab_prev) * eps
              + sum_steps [ sqrt(1 - ab_prev - sigma^2) / sqrt(ab_prev)
                              * eps_hat(x_t, t)
                            - d(t_prev) * eps_hat(x_prev, t_prev) ]

    (sums over the transitions with t_prev >= 1; the hop to 0 contributes
    nothing). Both routes consume identical noise draws, via noise_record if
    given or a stream recorded on the fly. The identity is exact, so the
    residual is pure floating-point noise, < 1e-6 by contract.
    """
    if cfg.N == 0:
        return 0.0
    record = noise_record if noise_record is not None else NoiseRecord()
    replaying = noise_record is not None and bool(noise_record.draws)
    rng_a = _RecordingRng(np.random.default_rng(cfg.seed), record, replay=replaying)

    subseq = make_subsequence(cfg.N, cfg.sampling_steps)
    scale = float(np.sqrt(schedule.alpha_bar[cfg.N]))
    x = scale * y.data

    # Route A: iterate, while keeping per-step quantities for route B.
    states, eps_hats, sigmas, draws = [], [], [], []
    for t, t_prev in subseq.transitions():
        states.append((t, x))
        eps_hat = denoiser.predict_eps(x, t, schedule)
        eps_hats.append(eps_hat)
        a = np.sqrt(schedule.alpha_bar[t])
        b = np.sqrt(1.0 - schedule.alpha_bar[t])
        x0_hat = (x - b * eps_hat) / a
        if t_prev == 0:
            sigmas.append(0.0)
            draws.append(None)
            x = x0_hat
            continue
        sigma = sigma_t(schedule, t, cfg.gamma, t_prev=t_prev)
        radicand = 1.0 - schedule.alpha_bar[t_prev] - sigma * sigma
        if radicand < 0.0:
            sigma = float(np.sqrt(1.0 - schedule.alpha_bar[t_prev]))
            radicand = 0.0
        sigmas.append(sigma)
        if sigma > 0.0:
            draw = rng_a.standard_normal(x.shape)
        else:
            draw = None
        draws.append(draw)
        x = (np.sqrt(schedule.alpha_bar[t_prev]) * x0_hat
             + np.sqrt(radicand) * eps_hat
             + (sigma * draw if draw is not None else 0.0))
    iterated = x

    # Route B: accumulated form over the recorded chain.
    t0, x_n = states[0]
    a0 = np.sqrt(schedule.alpha_bar[t0])
    b0 = np.sqrt(1.0 - schedule.alpha_bar[t0])
    accumulated = (x_n - b0 * eps_hats[0]) / a0
    transitions = list(subseq.transitions())
    for i, (t, t_prev) in enumerate(transitions):
        if t_prev == 0:
            continue
        ab_prev = schedule.alpha_bar[t_prev]
        sigma = sigmas[i]
        radicand = max(1.0 - ab_prev - sigma * sigma, 0.0)
        if draws[i] is not None:
            accumulated = accumulated + (sigma / np.sqrt(ab_prev)) * draws[i]
        accumulated = accumulated + (
            np.sqrt(radicand) / np.sqrt(ab_prev) * eps_hats[i]
            - float(schedule.denoise_level[t_prev]) * eps_hats[i + 1]
        )
    return float(np.max(np.abs(iterated - accumulated)))
