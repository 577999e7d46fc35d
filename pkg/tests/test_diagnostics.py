"""Block-health metrics, redistribution, stability, paired bootstrap."""

import numpy as np
import pytest

from ffblocks.diagnostics import (PredictionSet, depth_saturation,
                                  goodness_tables, lc_profile, loss_collapse,
                                  own_vs_inherited, paired_bootstrap,
                                  prefix_prediction_sets, predict,
                                  redistribution_check, sep_cur_nl, sep_nl,
                                  stability_bound_check)
from ffblocks.model import init_network
from ffblocks.numerics import softplus

LOG2 = float(np.log(2.0))


def pred_set(scores, true):
    return PredictionSet.from_scores(np.asarray(scores, dtype=float),
                                     np.asarray(true))


class TestPredictionSet:
    def test_argmax_with_lowest_index_ties(self):
        p = pred_set([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]], [0, 2])
        assert p.pred.tolist() == [0, 1]

    def test_accuracy(self):
        p = pred_set([[2.0, 1.0], [0.0, 1.0], [3.0, 0.0]], [0, 1, 1])
        assert p.accuracy == pytest.approx(2.0 / 3.0)


class TestSeparationMetrics:
    def test_identical_goodness_gives_zero(self):
        table = np.ones((5, 3))
        assert sep_cur_nl(table, np.array([0, 1, 2, 0, 1])) == 0.0

    def test_constant_lead_is_recovered(self):
        n, c = 6, 4
        true = np.arange(n) % c
        table = np.zeros((n, c))
        table[np.arange(n), true] = 1.7
        assert sep_cur_nl(table, true) == pytest.approx(1.7, rel=1e-14)

    def test_three_example_hand_case(self):
        """Hand-computed mean of (true goodness - best wrong goodness)."""
        table = np.array([[3.0, 1.0, 2.0],
                          [0.5, 2.0, 1.0],
                          [1.0, 4.0, 0.0]])
        true = np.array([0, 1, 1])
        # per example: 3-2=1, 2-1=1, 4-1=3 -> mean 5/3
        assert sep_cur_nl(table, true) == pytest.approx(5.0 / 3.0, rel=1e-14)

    def test_prefix_zero_equals_current(self):
        rng = np.random.default_rng(42)
        tables = rng.standard_normal((3, 10, 4))
        true = rng.integers(0, 4, 10)
        assert sep_nl(tables, true, 0) == sep_cur_nl(tables[0], true)

    def test_sep_nl_invariant_to_common_shift(self):
        rng = np.random.default_rng(42)
        tables = rng.standard_normal((3, 10, 4))
        true = rng.integers(0, 4, 10)
        shifted = tables + 5.0  # same constant for every label
        assert sep_nl(shifted, true, 2) == pytest.approx(
            sep_nl(tables, true, 2), rel=1e-12)

    def test_sep_nl_hand_case(self):
        tables = np.array([
            [[3.0, 1.0, 2.0], [0.5, 2.0, 1.0]],
            [[1.0, 0.0, 0.5], [1.0, 1.0, 2.0]],
        ])
        true = np.array([0, 1])
        prefix = tables.sum(axis=0)
        # example 0: 4 - max(1, 2.5) = 1.5; example 1: 3 - max(1.5, 3) = 0
        assert sep_nl(tables, true, 1) == pytest.approx(0.75, rel=1e-14)
        assert sep_cur_nl(prefix, true) == pytest.approx(0.75, rel=1e-14)


class TestDepthSaturation:
    def test_identical_prefixes_give_ones(self):
        p = pred_set([[1.0, 0.0], [0.0, 1.0]], [0, 1])
        ds = depth_saturation([p, p, p])
        np.testing.assert_allclose(ds, 1.0)

    def test_half_accuracy_prefix(self):
        full = pred_set([[1.0, 0.0], [0.0, 1.0]], [0, 1])       # acc 1
        half = pred_set([[1.0, 0.0], [1.0, 0.0]], [0, 1])       # acc 0.5
        ds = depth_saturation([half, full])
        np.testing.assert_allclose(ds, [0.5, 1.0])

    def test_zero_full_accuracy_reports_missing(self):
        wrong = pred_set([[0.0, 1.0], [1.0, 0.0]], [0, 1])
        assert np.all(np.isnan(depth_saturation([wrong, wrong])))


class TestLossCollapse:
    def test_zero_margins_give_log_two(self):
        lc = loss_collapse(np.zeros((3, 10)), beta=4.0)
        np.testing.assert_allclose(lc, LOG2, rtol=1e-14)

    def test_huge_margins_vanish(self):
        lc = loss_collapse(np.full((2, 4), 1e3), beta=4.0)
        assert np.all(lc == 0.0)

    def test_mixed_fixture_hand_value(self):
        margins = np.array([[1.0, -1.0], [0.5, 0.5]])
        lc = loss_collapse(margins, beta=2.0)
        row0 = np.mean(softplus(-2.0 * margins[0]))
        row1 = np.mean(softplus(-2.0 * margins.sum(axis=0)))
        np.testing.assert_allclose(lc, [row0, row1], rtol=1e-14)


class TestOwnVsInherited:
    def test_gamma_zero_gives_all_ones(self):
        rng = np.random.default_rng(42)
        g = rng.uniform(0.5, 2.0, (4, 16))
        np.testing.assert_allclose(own_vs_inherited(g, 0.0), 1.0, rtol=1e-14)

    def test_silent_block_scores_zero(self):
        g = np.ones((2, 8))
        g[1] = 0.0
        fracs = own_vs_inherited(g, 1.0)
        assert fracs[1] == 0.0

    def test_two_block_hand_case(self):
        g = np.array([[2.0, 2.0], [1.0, 1.0]])
        fracs = own_vs_inherited(g, 0.5)
        # mixed means: block0 2.0; block1 1 + 0.5*2 = 2.0
        np.testing.assert_allclose(fracs, [1.0, 0.5], rtol=1e-14)

    def test_zero_denominator_is_missing(self):
        g = np.zeros((2, 4))
        assert np.all(np.isnan(own_vs_inherited(g, 0.7)))


class TestRedistribution:
    def test_zero_perturbation_trivially_passes(self):
        rng = np.random.default_rng(42)
        tables = rng.standard_normal((4, 20, 5))
        true = rng.integers(0, 5, 20)
        report = redistribution_check(tables, true, 0, 3, np.zeros((20, 5)))
        assert report.passed and report.max_score_delta == 0.0

    def test_random_transfers_never_move_predictions(self):
        """Zero-sum goodness transfers leave every score and argmax alone."""
        rng = np.random.default_rng(42)
        tables = rng.standard_normal((4, 50, 6))
        true = rng.integers(0, 6, 50)
        for _ in range(200):
            a, b = rng.choice(4, size=2, replace=False)
            q = rng.standard_normal((50, 6)) * rng.uniform(0.1, 5.0)
            report = redistribution_check(tables, true, int(a), int(b), q)
            assert report.passed
            assert report.predictions_changed == 0
            assert report.max_score_delta <= 1e-12

    def test_margin_shift_matches_prediction(self):
        rng = np.random.default_rng(42)
        tables = rng.standard_normal((3, 10, 4))
        true = rng.integers(0, 4, 10)
        q = rng.standard_normal((10, 4))
        report = redistribution_check(tables, true, 1, 2, q)
        assert report.max_margin_shift_err <= 1e-12

    def test_rejects_equal_depths(self):
        with pytest.raises(ValueError):
            redistribution_check(np.zeros((3, 4, 2)), np.zeros(4, dtype=int),
                                 1, 1, np.zeros((4, 2)))


class TestStabilityBound:
    def test_identical_sets_trivially_satisfy(self):
        rng = np.random.default_rng(42)
        scores = rng.standard_normal((30, 5))
        true = rng.integers(0, 5, 30)
        a = pred_set(scores, true)
        b = pred_set(scores.copy(), true)
        report = stability_bound_check(a, b, np.linspace(0, 2, 20))
        assert report.passed and report.disagreement == 0.0

    def test_small_perturbations_cannot_flip_wide_margins(self):
        """Part (a): E <= t with margins > 2t forces zero disagreement."""
        rng = np.random.default_rng(42)
        n, c = 100, 4
        scores = np.zeros((n, c))
        true = rng.integers(0, c, n)
        scores[np.arange(n), true] = 3.0  # margin 3 everywhere
        t = 1.0
        noise = rng.uniform(-t, t, (n, c))
        a = pred_set(scores, true)
        b = pred_set(scores + noise, true)
        assert np.all(np.max(np.abs(a.scores - b.scores), axis=1) <= t)
        report = stability_bound_check(a, b, np.array([t]))
        assert report.disagreement == 0.0
        assert report.passed

    def test_union_bound_over_random_perturbations(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n, c = 200, 6
            scores = rng.standard_normal((n, c))
            true = rng.integers(0, c, n)
            noise = rng.standard_normal((n, c)) * rng.uniform(0.01, 1.0)
            a = pred_set(scores, true)
            b = pred_set(scores + noise, true)
            report = stability_bound_check(a, b, np.linspace(0.0, 3.0, 50))
            assert report.passed

    def test_accuracy_gap_bounded_by_disagreement(self):
        rng = np.random.default_rng(42)
        scores = rng.standard_normal((100, 3))
        true = rng.integers(0, 3, 100)
        a = pred_set(scores, true)
        b = pred_set(scores + rng.standard_normal((100, 3)), true)
        report = stability_bound_check(a, b, np.array([0.5]))
        assert abs(report.acc_a - report.acc_b) <= report.disagreement + 1e-15

    def test_rejects_mismatched_sets(self):
        a = pred_set([[1.0, 0.0]], [0])
        b = pred_set([[1.0, 0.0]], [1])
        with pytest.raises(ValueError):
            stability_bound_check(a, b, np.array([0.1]))


class TestPairedBootstrap:
    def test_identical_sets_give_degenerate_interval(self):
        rng = np.random.default_rng(42)
        scores = rng.standard_normal((50, 4))
        true = rng.integers(0, 4, 50)
        a = pred_set(scores, true)
        report = paired_bootstrap(a, pred_set(scores.copy(), true),
                                  resamples=2000, rng=np.random.default_rng(0))
        assert report.mean_delta == 0.0
        assert report.ci_low == 0.0 and report.ci_high == 0.0
        assert report.disagreement == 0.0
        assert report.flips_a_correct_b_wrong == 0

    def test_single_flip_arithmetic(self):
        n = 10
        true = np.zeros(n, dtype=int)
        scores_a = np.tile([1.0, 0.0], (n, 1))         # all correct
        scores_b = scores_a.copy()
        scores_b[0] = [0.0, 1.0]                        # one correct -> wrong
        a = pred_set(scores_a, true)
        b = pred_set(scores_b, true)
        report = paired_bootstrap(a, b, resamples=1000,
                                  rng=np.random.default_rng(0))
        assert report.mean_delta == pytest.approx(1.0 / n)
        assert report.disagreement == pytest.approx(1.0 / n)
        assert report.flips_a_correct_b_wrong == 1
        assert report.flips_a_wrong_b_correct == 0

    def test_planted_balanced_flips_straddle_zero(self):
        """13% disagreement split evenly should give a CI containing 0."""
        rng = np.random.default_rng(42)
        n = 2000
        true = np.zeros(n, dtype=int)
        scores_a = np.tile([1.0, 0.0, 0.0], (n, 1))
        scores_b = scores_a.copy()
        flips = rng.choice(n, size=260, replace=False)
        a_wins, b_wins = flips[:130], flips[130:]
        scores_b[a_wins] = [0.0, 1.0, 0.0]   # A correct, B wrong
        scores_a[b_wins] = [0.0, 0.0, 1.0]   # A wrong, B correct
        a = pred_set(scores_a, true)
        b = pred_set(scores_b, true)
        report = paired_bootstrap(a, b, resamples=3000,
                                  rng=np.random.default_rng(1))
        assert report.disagreement == pytest.approx(0.13, abs=1e-12)
        assert report.ci_low < 0.0 < report.ci_high
        assert report.ci_low <= report.mean_delta <= report.ci_high

    def test_interval_contains_point_estimate_and_nests(self):
        rng = np.random.default_rng(42)
        n = 500
        true = rng.integers(0, 3, n)
        scores_a = rng.standard_normal((n, 3))
        scores_b = rng.standard_normal((n, 3))
        a, b = pred_set(scores_a, true), pred_set(scores_b, true)
        report = paired_bootstrap(a, b, resamples=4000,
                                  rng=np.random.default_rng(2))
        assert report.ci_low <= report.mean_delta <= report.ci_high
        # nested coverage: the 80% interval sits inside the 95% one
        deltas = (a.pred == true).astype(float) - (b.pred == true).astype(float)
        rng2 = np.random.default_rng(2)
        means = np.array([deltas[rng2.integers(0, n, n)].mean()
                          for _ in range(4000)])
        lo80, hi80 = np.percentile(means, [10, 90])
        assert report.ci_low <= lo80 and hi80 <= report.ci_high

    def test_rejects_mismatch_and_bad_resamples(self):
        a = pred_set([[1.0, 0.0]], [0])
        with pytest.raises(ValueError):
            paired_bootstrap(a, pred_set([[1.0, 0.0]], [1]))
        with pytest.raises(ValueError):
            paired_bootstrap(a, a, resamples=0)


class TestNetworkLevelDiagnostics:
    def test_tables_match_per_label_forward(self):
        rng = np.random.default_rng(42)
        net = init_network(rng, 6, 8, 6, 3, 2)
        x = rng.standard_normal((5, 6))
        tables = goodness_tables(net, x)
        from ffblocks.model import network_forward
        for label in range(3):
            np.testing.assert_array_equal(tables[:, :, label],
                                          network_forward(net, x, label))

    def test_predict_sums_blocks(self):
        rng = np.random.default_rng(42)
        net = init_network(rng, 6, 8, 6, 3, 2)
        x = rng.standard_normal((5, 6))
        true = rng.integers(0, 3, 5)
        pred = predict(net, x, true)
        tables = goodness_tables(net, x)
        np.testing.assert_allclose(pred.scores, tables.sum(axis=0), rtol=1e-14)

    def test_prefix_sets_and_lc_profile_shapes(self):
        rng = np.random.default_rng(42)
        net = init_network(rng, 6, 8, 6, 3, 3)
        x = rng.standard_normal((7, 6))
        true = rng.integers(0, 3, 7)
        tables = goodness_tables(net, x)
        sets = prefix_prediction_sets(tables, true)
        assert len(sets) == 3
        lc = lc_profile(tables, true, beta=4.0)
        assert lc.shape == (3,)
        assert np.all(lc >= 0.0)
