import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmid.denoisers import GaussianDenoiser, GaussianPrior
from dmid.errors import ConfigurationError
from dmid.sampler import (
    InferenceConfig,
    NoiseRecord,
    StepDiagnostics,
    accumulation_check,
    embed,
    make_subsequence,
    reverse_step,
    run_inference,
)
from dmid.schedule import EmbeddingPlan, build_linear_schedule, select_timestep
from dmid.transform import LatentImage


class ZeroEps:
    def predict_eps(self, x_t, t, schedule):
        return np.zeros_like(x_t)


def gaussian_task(sched, sigma_latent=0.4, prior_std=0.8, n=32, seed=0):
    """Clean draw, matched noisy embedding state and posterior stats."""
    plan = select_timestep(sched, sigma_latent)
    a = np.sqrt(sched.alpha_bar[plan.N])
    b = np.sqrt(1.0 - sched.alpha_bar[plan.N])
    rng = np.random.default_rng(seed)
    x0 = prior_std * rng.standard_normal(n)
    x_n = a * x0 + b * rng.standard_normal(n)
    y = LatentImage(data=x_n / a, sigma_latent=plan.matched_sigma)
    m2 = sched.alpha_bar[plan.N] * prior_std ** 2 + 1.0 - sched.alpha_bar[plan.N]
    post_mean = (a * prior_std ** 2 / m2) * x_n
    post_var = prior_std ** 2 * (1.0 - sched.alpha_bar[plan.N]) / m2
    return plan, x0, x_n, y, post_mean, post_var


class TestMakeSubsequence:
    def test_single_hop(self):
        assert make_subsequence(10, 1).steps == (10,)

    def test_full_grid(self):
        assert make_subsequence(10, 10).steps == tuple(range(10, 0, -1))

    def test_uniform_spacing(self):
        assert make_subsequence(500, 5).steps == (500, 400, 300, 200, 100)

    def test_count_preserved_under_rounding(self):
        for n, s in [(7, 6), (13, 11), (100, 99), (5, 5), (977, 20)]:
            steps = make_subsequence(n, s).steps
            assert len(steps) == s
            assert steps[0] == n
            assert all(a > b for a, b in zip(steps, steps[1:]))
            assert steps[-1] >= 1

    def test_rejects_bad_counts(self):
        with pytest.raises(ConfigurationError):
            make_subsequence(10, 11)
        with pytest.raises(ConfigurationError):
            make_subsequence(10, 0)

    def test_transitions_end_at_zero(self):
        trans = list(make_subsequence(9, 3).transitions())
        assert trans[-1][1] == 0
        assert len(trans) == 3


class TestEmbed:
    def test_identity_at_n0(self):
        y = LatentImage(data=np.array([0.2, -0.7]), sigma_latent=0.0)
        plan = EmbeddingPlan(N=0, scale=1.0, matched_sigma=0.0)
        assert np.array_equal(embed(y, plan), y.data)

    def test_scaling(self):
        y = LatentImage(data=np.array([1.0, -1.0]), sigma_latent=1.0)
        plan = EmbeddingPlan(N=5, scale=0.5, matched_sigma=1.0)
        assert np.array_equal(embed(y, plan), np.array([0.5, -0.5]))

    def test_variance_preservation(self, sched):
        # Monte Carlo: unit-variance signal plus matched noise, scaled, has
        # total variance 1
        plan = select_timestep(sched, 0.7)
        rng = np.random.default_rng(4)
        n = 10 ** 6
        signal = rng.standard_normal(n)
        y = LatentImage(data=signal + plan.matched_sigma * rng.standard_normal(n),
                        sigma_latent=plan.matched_sigma)
        state = embed(y, plan)
        assert np.var(state) == pytest.approx(1.0, rel=0.005)


class TestReverseStep:
    def test_final_step_returns_posterior_mean(self, sched):
        plan, x0, x_n, y, post_mean, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        out = reverse_step(x_n, plan.N, 0, den, sched, 0.0,
                          np.random.default_rng(0))
        assert np.max(np.abs(out - post_mean)) < 1e-9

    def test_zero_eps_is_pure_rescaling(self, sched):
        x = np.array([1.0, 2.0, -3.0])
        out = reverse_step(x, 200, 120, ZeroEps(), sched, 0.0,
                          np.random.default_rng(0))
        factor = np.sqrt(sched.alpha_bar[120] / sched.alpha_bar[200])
        assert np.allclose(out, factor * x, rtol=1e-12)

    def test_one_step_distribution_matches_closed_form(self, sched):
        # Monte Carlo vs the analytic reverse-conditional Gaussian
        plan, x0, x_n, y, _, _ = gaussian_task(sched, n=1)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        t, t_prev = plan.N, plan.N // 2
        reps = 10 ** 5
        outs = np.empty(reps)
        for i in range(reps):
            outs[i] = reverse_step(x_n, t, t_prev, den, sched, 1.0,
                                   np.random.default_rng(i))[0]
        from dmid.schedule import sigma_t

        eps_hat = den.predict_eps(x_n, t, sched)
        a = np.sqrt(sched.alpha_bar[t])
        b = np.sqrt(1.0 - sched.alpha_bar[t])
        x0_hat = (x_n - b * eps_hat) / a
        sig = sigma_t(sched, t, 1.0, t_prev=t_prev)
        mean = (np.sqrt(sched.alpha_bar[t_prev]) * x0_hat
                + np.sqrt(1.0 - sched.alpha_bar[t_prev] - sig ** 2) * eps_hat)[0]
        se = sig / np.sqrt(reps)
        assert abs(outs.mean() - mean) < 3.0 * se
        var_se = sig ** 2 * np.sqrt(2.0 / reps)
        assert abs(outs.var() - sig ** 2) < 3.0 * var_se

    def test_radicand_clamp_diagnostics(self, sched):
        # a long hop with gamma > 1 pushes sigma^2 past 1 - alpha_bar_prev,
        # forcing a negative radicand; the step clamps and counts
        diag = StepDiagnostics()
        reverse_step(np.zeros(4), 500, 1, ZeroEps(), sched, 1.5,
                     np.random.default_rng(0), diagnostics=diag)
        assert diag.radicand_clamps == 1

    def test_invalid_transition(self, sched):
        with pytest.raises(ConfigurationError):
            reverse_step(np.zeros(2), 5, 5, ZeroEps(), sched, 0.0,
                         np.random.default_rng(0))


class TestRunInference:
    def test_n0_is_noop(self, sched):
        y = LatentImage(data=np.array([0.1, 0.2]), sigma_latent=0.0)
        out = run_inference(y, InferenceConfig(N=0, sampling_steps=0), sched,
                            ZeroEps())
        assert np.array_equal(out.data, y.data)
        assert out.sigma_latent == 0.0

    def test_single_step_is_exact_mmse_and_seed_independent(self, sched):
        plan, x0, x_n, y, post_mean, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        outs = [run_inference(y, InferenceConfig(N=plan.N, sampling_steps=1,
                                                 gamma=0.85, seed=s),
                              sched, den).data for s in (0, 123)]
        assert np.array_equal(outs[0], outs[1])
        assert np.max(np.abs(outs[0] - post_mean)) < 1e-9

    def test_determinism(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        cfg = InferenceConfig(N=plan.N, sampling_steps=7, gamma=0.85, seed=9)
        a = run_inference(y, cfg, sched, den).data
        b = run_inference(y, cfg, sched, den).data
        assert np.array_equal(a, b)

    def test_seed_sensitivity(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        a = run_inference(y, InferenceConfig(N=plan.N, sampling_steps=5,
                                             gamma=0.85, seed=1), sched, den)
        b = run_inference(y, InferenceConfig(N=plan.N, sampling_steps=5,
                                             gamma=0.85, seed=2), sched, den)
        assert not np.array_equal(a.data, b.data)

    def test_probability_flow_conservation(self, sched):
        # deterministic flow preserves x / sqrt(marginal variance) for a
        # zero-mean Gaussian prior
        plan, x0, x_n, y, _, _ = gaussian_task(sched, sigma_latent=1.0, n=64,
                                               seed=3)
        s = 0.8
        den = GaussianDenoiser(GaussianPrior(0.0, s))
        out = run_inference(y, InferenceConfig(N=plan.N,
                                               sampling_steps=min(256, plan.N),
                                               gamma=0.0, seed=0), sched, den)
        m = np.sqrt(sched.alpha_bar[plan.N] * s * s + 1.0 - sched.alpha_bar[plan.N])
        expected = s * x_n / m
        rel = np.max(np.abs(out.data - expected) / np.maximum(np.abs(expected), 1e-12))
        assert rel < 0.01

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            InferenceConfig(N=10, sampling_steps=11)
        with pytest.raises(ConfigurationError):
            InferenceConfig(N=0, sampling_steps=1)
        with pytest.raises(ConfigurationError):
            InferenceConfig(N=10, sampling_steps=5, gamma=1.5)


class TestAccumulationCheck:
    def test_single_step_residual_exactly_zero(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        cfg = InferenceConfig(N=plan.N, sampling_steps=1, gamma=0.85, seed=0)
        assert accumulation_check(y, cfg, sched, den) == 0.0

    def test_ten_steps_gaussian(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        cfg = InferenceConfig(N=plan.N, sampling_steps=10, gamma=0.85, seed=5)
        assert accumulation_check(y, cfg, sched, den) < 1e-6

    def test_zero_eps_denoiser(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        cfg = InferenceConfig(N=plan.N, sampling_steps=10, gamma=0.85, seed=5)
        assert accumulation_check(y, cfg, sched, ZeroEps()) < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=10, max_value=900),
           st.integers(min_value=1, max_value=20),
           st.sampled_from([0.0, 0.85, 1.0]),
           st.floats(min_value=0.2, max_value=3.0),
           st.integers(min_value=0, max_value=10 ** 6))
    def test_randomized_property_suite(self, N, S, gamma, prior_std, seed):
        sched = build_linear_schedule(1000, 1e-4, 0.02)
        S = min(S, N)
        rng = np.random.default_rng(seed)
        y = LatentImage(data=rng.standard_normal(8),
                        sigma_latent=float(sched.denoise_level[N]))
        den = GaussianDenoiser(GaussianPrior(float(rng.normal()), prior_std))
        cfg = InferenceConfig(N=N, sampling_steps=S, gamma=gamma, seed=seed)
        assert accumulation_check(y, cfg, sched, den) < 1e-6

    def test_shared_noise_record_replay(self, sched):
        plan, _, _, y, _, _ = gaussian_task(sched)
        den = GaussianDenoiser(GaussianPrior(0.0, 0.8))
        cfg = InferenceConfig(N=plan.N, sampling_steps=6, gamma=1.0, seed=2)
        record = NoiseRecord()
        r1 = accumulation_check(y, cfg, sched, den, noise_record=record)
        assert len(record.draws) == 5  # one per non-terminal transition
        r2 = accumulation_check(y, cfg, sched, den, noise_record=record)
        assert r1 < 1e-6 and r2 < 1e-6

    def test_noise_record_serialization(self):
        record = NoiseRecord(draws=[np.arange(6.0).reshape(2, 3),
                                    np.ones((2, 3))])
        raw = record.tobytes()
        back = NoiseRecord.frombytes(raw, (2, 3))
        assert len(back.draws) == 2
        for a, b in zip(record.draws, back.draws):
            assert np.array_equal(a, b)
