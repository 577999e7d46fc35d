"""Margin calculus: barriers, attenuation, free-riding, the gate."""

import mpmath
import numpy as np
import pytest

from ffblocks.goodness import (GateConfig, MarginTrace, RegimeError,
                               attenuation_bounds, attenuation_ratio,
                               attenuation_stats, barrier, barrier_deriv,
                               cumulative_margin, effective_gamma,
                               free_riding_index, prefix_margins)
from ffblocks.numerics import finite_diff_grad, sigmoid


class TestCumulativeMargin:
    def test_history_weighted_sum(self):
        # gamma * P = 0.7 * 1.76 = 1.232 on top of the current margin
        assert cumulative_margin(2.36, 1.76, 0.7) == pytest.approx(3.592, abs=1e-12)

    def test_gamma_zero_ignores_history(self):
        assert cumulative_margin(1.5, 99.0, 0.0) == 1.5

    def test_gamma_one_passes_history_through(self):
        assert cumulative_margin(0.0, 5.0, 1.0) == 5.0

    def test_rejects_gamma_outside_unit_interval(self):
        with pytest.raises(ValueError):
            cumulative_margin(1.0, 1.0, 1.5)


class TestBarrier:
    def test_at_zero(self):
        assert barrier(0.0, 4.0) == pytest.approx(np.log(2.0), rel=1e-15)

    def test_against_extended_precision(self):
        with mpmath.workdps(50):
            expected = float(mpmath.log(1 + mpmath.e ** -4))
        assert barrier(1.0, 4.0) == pytest.approx(expected, rel=1e-14)
        assert barrier(1.0, 4.0) == pytest.approx(0.01815, abs=5e-6)

    def test_linear_tail(self):
        assert barrier(-10.0, 4.0) == pytest.approx(40.0, rel=1e-12)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError):
            barrier(0.0, 0.0)


class TestBarrierDeriv:
    def test_at_zero_is_minus_half_beta(self):
        assert barrier_deriv(0.0, 4.0) == -2.0

    def test_vanishes_for_large_margins(self):
        val = barrier_deriv(200.0, 4.0)
        assert val < 0.0 or val == 0.0
        assert abs(val) < 1e-12

    def test_strictly_negative_on_moderate_inputs(self):
        rng = np.random.default_rng(42)
        u = rng.uniform(-30, 30, 1000)
        assert np.all(barrier_deriv(u, 4.0) < 0)

    def test_matches_finite_difference_of_barrier(self):
        got = barrier_deriv(1.0, 4.0)
        fd = finite_diff_grad(lambda p: float(barrier(p[0], 4.0)),
                              np.array([1.0]), h=1e-4)
        assert got == pytest.approx(-0.07194, abs=1e-5)
        assert got == pytest.approx(fd[0], rel=1e-6)


class TestAttenuationRatio:
    def test_reported_value_at_gamma_point_seven(self):
        # block-1 operating point of the gamma=0.7 regime
        assert attenuation_ratio(2.36, 1.76, 0.7, 4.0) == pytest.approx(
            7.2e-3, rel=0.05)

    def test_reported_value_at_gamma_one(self):
        assert attenuation_ratio(1.08, 1.74, 1.0, 4.0) == pytest.approx(
            9.7e-4, rel=0.05)

    def test_identity_when_history_empty(self):
        rng = np.random.default_rng(42)
        for m in rng.uniform(-5, 5, 20):
            assert attenuation_ratio(m, 0.0, 0.9, 4.0) == 1.0

    def test_matches_barrier_deriv_ratio(self):
        """R = |barrier'(m + gamma P)| / |barrier'(m)| to 1e-12 relative."""
        rng = np.random.default_rng(42)
        m = rng.uniform(-3, 5, 10_000)
        p = rng.uniform(-3, 8, 10_000)
        gamma = rng.uniform(0, 1, 10_000)
        beta = rng.uniform(1, 8, 10_000)
        direct = np.abs(barrier_deriv(m + gamma * p, beta)) / np.abs(
            barrier_deriv(m, beta))
        np.testing.assert_allclose(attenuation_ratio(m, p, gamma, beta),
                                   direct, rtol=1e-12)

    def test_survives_huge_exponents(self):
        assert attenuation_ratio(200.0, 50.0, 1.0, 4.0) >= 0.0
        assert np.isfinite(attenuation_ratio(200.0, 50.0, 1.0, 4.0))

    def test_can_exceed_one_for_negative_history(self):
        assert attenuation_ratio(1.0, -2.0, 1.0, 4.0) > 1.0

    def test_monotone_nonincreasing_in_history(self):
        p_grid = np.linspace(0.0, 8.0, 200)
        r = attenuation_ratio(1.5, p_grid, 0.7, 4.0)
        assert np.all(np.diff(r) <= 0)


class TestAttenuationBounds:
    def test_degenerate_point(self):
        lo, hi = attenuation_bounds(0.0, 0.0, 0.7, 4.0)
        assert lo == 1.0 and hi == 1.0

    def test_sandwich_at_worked_point(self):
        # exp(-2) and 2 exp(-2) bracket (1+e^8)/(1+e^10)
        lo, hi = attenuation_bounds(2.0, 1.0, 0.5, 4.0)
        assert lo == pytest.approx(np.exp(-2.0), rel=1e-12)
        assert hi == pytest.approx(2 * np.exp(-2.0), rel=1e-12)
        ratio = attenuation_ratio(2.0, 1.0, 0.5, 4.0)
        assert ratio == pytest.approx(0.1353, abs=2e-4)
        assert lo <= ratio <= hi

    def test_brackets_reported_table_value(self):
        lo, hi = attenuation_bounds(2.36, 1.76, 0.7, 4.0)
        ratio = attenuation_ratio(2.36, 1.76, 0.7, 4.0)
        assert ratio == pytest.approx(7.2e-3, rel=0.05)
        assert lo <= ratio <= hi

    def test_sandwich_over_random_draws(self):
        """No violations over 1e5 in-regime draws."""
        rng = np.random.default_rng(42)
        m = rng.uniform(0, 5, 100_000)
        p = rng.uniform(0, 8, 100_000)
        gamma = rng.uniform(0, 1, 100_000)
        beta = rng.uniform(1, 8, 100_000)
        lo, hi = attenuation_bounds(m, p, gamma, beta)
        r = attenuation_ratio(m, p, gamma, beta)
        assert np.all(lo <= r) and np.all(r <= hi)

    def test_refuses_out_of_regime(self):
        with pytest.raises(RegimeError):
            attenuation_bounds(-0.5, 1.0, 0.7, 4.0)
        with pytest.raises(RegimeError):
            attenuation_bounds(1.0, -0.5, 0.7, 4.0)


class TestFreeRidingIndex:
    def test_zero_when_history_empty(self):
        m = np.array([0.5, 1.0, -0.3])
        assert free_riding_index(m, np.zeros(3), 0.9, 4.0) == 0.0

    def test_zero_when_gamma_zero(self):
        rng = np.random.default_rng(42)
        m = rng.uniform(-3, 3, 100)
        p = rng.uniform(-3, 8, 100)
        assert free_riding_index(m, p, 0.0, 4.0) == 0.0

    def test_single_example_arithmetic(self):
        # pick (m, P) with R = 0.3 by solving the ratio equation numerically
        m, gamma, beta = 1.0, 1.0, 4.0
        target = 0.3
        lo_p, hi_p = 0.0, 10.0
        for _ in range(200):
            mid = 0.5 * (lo_p + hi_p)
            if attenuation_ratio(m, mid, gamma, beta) > target:
                lo_p = mid
            else:
                hi_p = mid
        p = 0.5 * (lo_p + hi_p)
        assert free_riding_index(np.array([m]), np.array([p]), gamma,
                                 beta) == pytest.approx(0.7, abs=1e-6)

    def test_clip_on_amplifying_examples(self):
        """Examples with R > 1 (negative history) contribute exactly 0."""
        m = np.array([1.0])
        p = np.array([-2.0])
        assert attenuation_ratio(m, p, 1.0, 4.0)[0] > 1.5
        assert free_riding_index(m, p, 1.0, 4.0) == 0.0

    def test_range_over_random_draws(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            m = rng.uniform(-4, 4, 64)
            p = rng.uniform(-4, 10, 64)
            idx = free_riding_index(m, p, rng.uniform(0, 1), rng.uniform(1, 8))
            assert 0.0 <= idx < 1.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            free_riding_index(np.array([]), np.array([]), 0.5, 4.0)


class TestEffectiveGamma:
    def test_off_mode_returns_base(self):
        gate = GateConfig(mode="off", gamma0=0.7)
        assert effective_gamma(gate, 123.0, 456.0) == 0.7

    def test_prev_mode_reproduces_gate_closure(self):
        """Previous-block goodness 4.04 against kappa=2 nearly shuts the gate."""
        gate = GateConfig(mode="prev", kappa=2.0, tau=1.0, gamma0=1.0)
        got = effective_gamma(gate, 0.0, 4.04)
        assert got == pytest.approx(0.115, abs=5e-4)
        assert round(got, 2) == 0.12

    def test_midpoint_at_kappa(self):
        gate = GateConfig(mode="cumulative", kappa=0.0, tau=1.0, gamma0=0.8)
        assert effective_gamma(gate, 0.0, 99.0) == pytest.approx(0.4, rel=1e-12)

    def test_monotone_nonincreasing_in_goodness(self):
        gate = GateConfig(mode="cumulative", kappa=1.0, tau=2.0, gamma0=1.0)
        grid = np.linspace(-5, 5, 100)
        vals = [effective_gamma(gate, g, 0.0) for g in grid]
        assert np.all(np.diff(vals) <= 0)
        assert all(0.0 <= v <= gate.gamma0 for v in vals)

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            GateConfig(mode="sometimes")
        with pytest.raises(ValueError):
            GateConfig(gamma0=1.5)
        with pytest.raises(ValueError):
            GateConfig(tau=-1.0)


class TestMarginTrace:
    def test_prefix_invariants(self):
        rng = np.random.default_rng(42)
        m_nl = rng.standard_normal((4, 8))
        m_ni = rng.standard_normal((4, 8))
        trace = MarginTrace.from_margins(m_nl, m_ni, np.full(4, 0.7))
        assert np.array_equal(trace.p_nl[0], np.zeros(8))
        for d in range(1, 4):
            np.testing.assert_allclose(trace.p_nl[d],
                                       trace.p_nl[d - 1] + trace.m_nl[d - 1])
        m, p = trace.block(2, "ni")
        np.testing.assert_allclose(p, m_ni[:2].sum(axis=0))

    def test_prefix_margins_shape(self):
        p = prefix_margins(np.ones((3, 5)))
        np.testing.assert_allclose(p, [[0] * 5, [1] * 5, [2] * 5])


class TestAttenuationStats:
    def test_in_regime_bounds_hold(self):
        rng = np.random.default_rng(42)
        m = rng.uniform(0, 5, 1000)
        p = rng.uniform(0, 8, 1000)
        stats = attenuation_stats(m, p, 0.7, 4.0)
        lo, hi = attenuation_bounds(m, p, 0.7, 4.0)
        assert lo.min() <= stats.min_ratio
        assert stats.max_ratio <= hi.max()
        assert 0.0 <= stats.free_riding < 1.0
        assert stats.frac_prev_nonneg == 1.0
