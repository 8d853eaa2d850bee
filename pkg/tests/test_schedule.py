import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmid.errors import ConfigurationError, SaturationError
from dmid.schedule import (
    build_linear_schedule,
    dump_schedule_rows,
    select_timestep,
    sigma_t,
)


def mp_alpha_bar(T, beta_start, beta_end):
    """Independent extended-precision cumulative-product oracle."""
    mpmath.mp.dps = 50
    bs, be = mpmath.mpf(beta_start), mpmath.mpf(beta_end)
    ab = [mpmath.mpf(1)]
    for i in range(1, T + 1):
        beta_i = bs + (be - bs) * (i - 1) / (T - 1)
        ab.append(ab[-1] * (1 - beta_i))
    return ab


class TestBuildLinearSchedule:
    def test_alpha_bar_1_exact(self, sched):
        assert sched.alpha_bar[1] == 1.0 - 1e-4

    def test_t2_constant_beta(self):
        s = build_linear_schedule(2, 0.5, 0.5)
        assert s.alpha_bar[2] == pytest.approx(0.25, abs=1e-15)

    def test_alpha_bar_matches_extended_precision_oracle(self, sched):
        oracle = mp_alpha_bar(1000, 1e-4, 0.02)
        for t in (1, 10, 100, 500, 999, 1000):
            assert abs(sched.alpha_bar[t] - float(oracle[t])) <= 1e-12 * float(oracle[t])

    def test_endpoints(self, sched):
        assert sched.beta[1] == 1e-4
        assert sched.beta[1000] == 0.02

    def test_invariants(self, sched):
        ab = sched.alpha_bar
        assert ab[0] == 1.0
        assert np.all(np.diff(ab) < 0)
        assert 0.0 < ab[-1] < 1.0
        d = sched.denoise_level
        assert d[0] == 0.0
        assert np.all(np.diff(d) > 0)
        for t in range(1, sched.T + 1):
            assert sched.alpha[t] == 1.0 - sched.beta[t]
            assert abs(ab[t] - ab[t - 1] * sched.alpha[t]) <= 1e-12 * ab[t]

    @pytest.mark.parametrize("T,b0,b1", [(1, 0.1, 0.2), (0, 0.1, 0.2),
                                         (10, 0.0, 0.2), (10, 0.2, 0.1),
                                         (10, 0.1, 1.0)])
    def test_rejects_bad_config(self, T, b0, b1):
        with pytest.raises(ConfigurationError):
            build_linear_schedule(T, b0, b1)


class TestSigmaT:
    def test_gamma_zero(self, sched):
        assert sigma_t(sched, 500, 0.0) == 0.0

    def test_midpoint_matches_formula_oracle(self, sched):
        mpmath.mp.dps = 50
        oracle = mp_alpha_bar(1000, 1e-4, 0.02)
        ab_t, ab_p = oracle[500], oracle[499]
        expected = mpmath.mpf("0.85") * mpmath.sqrt((1 - ab_p) / (1 - ab_t)) \
            * mpmath.sqrt(1 - ab_t / ab_p)
        assert sigma_t(sched, 500, 0.85) == pytest.approx(float(expected), rel=1e-12)

    def test_terminal_step_is_deterministic(self, sched):
        # alpha_bar_0 = 1 makes the leading factor vanish: no noise on t=1 -> 0
        assert sigma_t(sched, 1, 1.0) == 0.0

    @pytest.mark.parametrize("t", [0, 1001, -3])
    def test_out_of_range(self, sched, t):
        with pytest.raises(IndexError):
            sigma_t(sched, t, 0.5)


class TestSelectTimestep:
    def test_zero_sigma(self, sched):
        plan = select_timestep(sched, 0.0)
        assert plan.N == 0 and plan.scale == 1.0 and plan.matched_sigma == 0.0

    def test_exact_table_hit(self, sched):
        plan = select_timestep(sched, float(sched.denoise_level[700]))
        assert plan.N == 700

    def test_sigma50_matches_linear_scan_oracle(self, sched):
        sigma = 2.0 * 50.0 / 255.0
        scan = int(np.argmin(np.abs(sched.denoise_level[: sched.T] - sigma)))
        assert select_timestep(sched, sigma).N == scan

    def test_saturation(self, sched):
        with pytest.raises(SaturationError) as exc:
            select_timestep(sched, sched.max_embeddable_sigma * 1.001)
        assert exc.value.max_sigma == pytest.approx(sched.denoise_level[sched.T - 1])

    def test_rejects_negative(self, sched):
        with pytest.raises(ConfigurationError):
            select_timestep(sched, -0.1)

    def test_round_trip_every_t(self, sched):
        for t in range(1, sched.T):
            assert select_timestep(sched, float(sched.denoise_level[t])).N == t

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=0.0, max_value=100.0),
           st.floats(min_value=0.0, max_value=100.0))
    def test_monotone(self, sa, sb):
        sched = default_sched_cache()
        if sa > sb:
            sa, sb = sb, sa
        assert select_timestep(sched, sa).N <= select_timestep(sched, sb).N

    def test_plan_variance_preserving(self, sched):
        for sigma in (0.1, 0.4, 1.0, 3.0):
            plan = select_timestep(sched, sigma)
            total = plan.scale ** 2 + (plan.scale * plan.matched_sigma) ** 2
            assert total == pytest.approx(1.0, abs=1e-9)


_cache = {}


def default_sched_cache():
    if "s" not in _cache:
        _cache["s"] = build_linear_schedule(1000, 1e-4, 0.02)
    return _cache["s"]


def test_dump_rows(sched):
    rows = list(dump_schedule_rows(sched))
    assert len(rows) == sched.T + 1
    assert rows[0] == (0, 0.0, 1.0, 0.0)
    t, beta, ab, d = rows[500]
    assert t == 500 and beta == sched.beta[500] and ab == sched.alpha_bar[500]
