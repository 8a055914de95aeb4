import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from helpers import dataset_from, two_cluster_data
from survivalkit import SurvivalCurve, SurvivalDataset, kaplan_meier
from survivalkit.evaluation import (
    bootstrap_cv_error,
    brier_curve,
    calibration_pairs,
    cox_spec,
    default_grid,
    forest_spec,
    km_spec,
    roc_auc,
    welch_t_test,
)
from survivalkit.forest import ForestConfig
from survivalkit.tree import TreeConfig


def naive_brier(predictions, data, grid):
    """Direct transcription of the weighted-status definition, in Fractions
    where possible, as an independent oracle for the vectorized version."""
    rev = kaplan_meier(
        SurvivalDataset(data.times, ~data.events, np.zeros((data.n, 0)), [])
    )
    out = []
    for t in grid:
        total = 0.0
        for i in range(data.n):
            s = predictions[i].value_at(t)
            if data.times[i] <= t and data.events[i]:
                g = rev.left_values_at([data.times[i]])[0]
                total += s**2 / g
            elif data.times[i] > t:
                g = rev.value_at(t)
                total += (1 - s) ** 2 / g
        out.append(total / data.n)
    return np.array(out)


class TestBrierCurve:
    def test_oracle_predictor_zero_everywhere(self):
        rng = np.random.default_rng(0)
        times = rng.uniform(1, 10, 30)
        data = dataset_from(times, np.ones(30, bool))
        oracle = [SurvivalCurve([t], [0.0]) for t in times]
        curve = brier_curve(oracle, data, default_grid(data))
        np.testing.assert_array_equal(curve.bs, np.zeros_like(curve.bs))
        assert curve.ibs == 0.0

    def test_constant_half_gives_quarter(self):
        rng = np.random.default_rng(1)
        data = dataset_from(rng.uniform(1, 10, 25), np.ones(25, bool))
        half = [SurvivalCurve([0.0], [0.5]) for _ in range(25)]
        curve = brier_curve(half, data, default_grid(data))
        np.testing.assert_allclose(curve.bs, 0.25, atol=1e-15)
        assert curve.ibs == pytest.approx(0.25, abs=1e-15)

    def test_five_row_hand_values(self):
        # times (1,e),(2,e),(2,e),(3,c),(4,e), K-M self-prediction.
        # reverse K-M: one censoring event at t=3 with 2 at risk -> G = 1, then 1/2.
        # BS(1) = (0.64 + 4*0.04)/5, BS(2) = (0.16*3 + 0.36*2)/5,
        # BS(3) = (0.16*3 + 0.36/0.5)/5, BS(4) = 0.
        data = dataset_from([1.0, 2.0, 2.0, 3.0, 4.0], [1, 1, 1, 0, 1])
        km = kaplan_meier(data)
        preds = [km] * 5
        grid = np.array([1.0, 2.0, 3.0, 4.0])
        curve = brier_curve(preds, data, grid)
        np.testing.assert_array_equal(curve.times, [0.0, 1.0, 2.0, 3.0, 4.0])
        expected = [0.0, 0.16, 0.24, 0.24, 0.0]
        np.testing.assert_allclose(curve.bs, expected, atol=1e-12)
        # trapezoid of the hand values over [0, 4]
        assert curve.ibs == pytest.approx(0.16, abs=1e-12)
        np.testing.assert_allclose(curve.bs, naive_brier(preds, data, curve.times), atol=1e-12)

    def test_matches_naive_oracle_on_random_data(self):
        rng = np.random.default_rng(5)
        n = 40
        times = rng.exponential(20, n) + 0.1
        events = rng.random(n) < 0.7
        data = dataset_from(times, events)
        km = kaplan_meier(data)
        preds = [km] * n
        grid = default_grid(data)
        curve = brier_curve(preds, data, grid)
        np.testing.assert_allclose(curve.bs, naive_brier(preds, data, curve.times), atol=1e-10)

    def test_no_censoring_equals_unweighted_squared_error(self):
        rng = np.random.default_rng(2)
        n = 30
        times = rng.uniform(1, 20, n)
        data = dataset_from(times, np.ones(n, bool))
        km = kaplan_meier(data)
        preds = [km] * n
        grid = default_grid(data)
        curve = brier_curve(preds, data, grid)
        for k, t in enumerate(curve.times):
            s = km.value_at(t)
            direct = np.mean(
                np.where(times <= t, s**2, (1 - s) ** 2)
            )
            assert curve.bs[k] == pytest.approx(direct, abs=1e-15)

    def test_grid_refinement_stable(self):
        # smooth exponential truth, uncensored sample
        rng = np.random.default_rng(3)
        n = 400
        times = rng.exponential(10, n)
        data = dataset_from(times, np.ones(n, bool))
        tau = float(np.quantile(times, 0.9))
        curve_fn = SurvivalCurve(np.linspace(0.01, tau, 400), np.exp(-np.linspace(0.01, tau, 400) / 10))
        preds = [curve_fn] * n
        coarse = np.linspace(tau / 50, tau, 50)
        fine = np.linspace(tau / 100, tau, 100)
        ibs_a = brier_curve(preds, data, coarse).ibs
        ibs_b = brier_curve(preds, data, fine).ibs
        assert abs(ibs_a - ibs_b) < 1e-3

    def test_truncates_when_censoring_mass_exhausted(self):
        # everyone censored at 5 except one late event: G hits 0 at 5
        data = dataset_from([1.0, 5.0, 5.0, 5.0], [1, 0, 0, 0])
        km = kaplan_meier(data)
        with pytest.warns(UserWarning, match="truncating"):
            curve = brier_curve([km] * 4, data, np.array([1.0, 5.0]))
        assert curve.times.max() < 5.0

    def test_grid_validation(self):
        data = dataset_from([1.0, 2.0], [1, 1])
        km = kaplan_meier(data)
        with pytest.raises(ValueError, match="observed time range"):
            brier_curve([km] * 2, data, np.array([1.0, 50.0]))
        with pytest.raises(ValueError):
            brier_curve([km], data, np.array([1.0]))


class TestBootstrapCv:
    def test_single_replicate_equals_manual_split(self):
        data = two_cluster_data(n=40, seed=4)
        grid = default_grid(data)
        result = bootstrap_cv_error(km_spec(), data, 1, grid, rng_seed=9)
        idx = result.replicate_indices[0]
        oob = np.setdiff1d(np.arange(data.n), idx)
        manual = brier_curve(
            km_spec()(data.take(idx))(data.X[oob]),
            data.take(oob),
            grid[grid <= data.times[oob].max()],
        )
        assert result.ibs_samples[0] == pytest.approx(manual.ibs, abs=1e-15)
        np.testing.assert_allclose(result.mean_curve.bs, manual.bs, atol=1e-15)

    def test_km_worse_than_forest_on_informative_data(self):
        data = two_cluster_data(n=160, seed=5)
        grid = default_grid(data)
        config = ForestConfig(
            n_trees=25, tree=TreeConfig(alpha=0.05, min_node_size=10, min_split_size=25), rng_seed=0
        )
        km_ibs = []
        forest_ibs = []
        for seed in range(3):
            km_ibs.append(
                np.mean(bootstrap_cv_error(km_spec(), data, 6, grid, rng_seed=seed).ibs_samples)
            )
            forest_ibs.append(
                np.mean(
                    bootstrap_cv_error(forest_spec(config), data, 6, grid, rng_seed=seed).ibs_samples
                )
            )
        assert np.mean(km_ibs) >= np.mean(forest_ibs)

    def test_deterministic(self):
        data = two_cluster_data(n=50, seed=6)
        grid = default_grid(data)
        a = bootstrap_cv_error(cox_spec(), data, 4, grid, rng_seed=3)
        b = bootstrap_cv_error(cox_spec(), data, 4, grid, rng_seed=3)
        assert a.ibs_samples == b.ibs_samples
        np.testing.assert_array_equal(a.mean_curve.bs, b.mean_curve.bs)

    def test_same_seed_same_replicate_draws_across_models(self):
        data = two_cluster_data(n=50, seed=6)
        grid = default_grid(data)
        a = bootstrap_cv_error(km_spec(), data, 3, grid, rng_seed=1)
        b = bootstrap_cv_error(cox_spec(), data, 3, grid, rng_seed=1)
        for ia, ib in zip(a.replicate_indices, b.replicate_indices):
            np.testing.assert_array_equal(ia, ib)

    def test_n_boot_validated(self):
        data = two_cluster_data(n=30, seed=6)
        with pytest.raises(ValueError):
            bootstrap_cv_error(km_spec(), data, 0, default_grid(data))


class TestWelch:
    def test_identical_samples(self):
        result = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.t == 0.0
        assert result.p_value == pytest.approx(1.0)

    def test_hand_example(self):
        # means 2.5 vs 3.5, both variances 5/3: t = -1/sqrt(5/6), df = 6
        result = welch_t_test([1, 2, 3, 4], [2, 3, 4, 5])
        assert result.t == pytest.approx(-math.sqrt(6.0 / 5.0), abs=1e-12)
        assert result.df == pytest.approx(6.0, abs=1e-12)
        assert result.p_value == pytest.approx(0.3153335962012298, abs=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(8)
        a = rng.normal(0, 1, 14)
        b = rng.normal(0.8, 2, 9)
        mine = welch_t_test(a, b)
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert mine.t == pytest.approx(ref.statistic, rel=1e-12)
        assert mine.p_value == pytest.approx(ref.pvalue, rel=1e-12)
        assert mine.df == pytest.approx(ref.df, rel=1e-12)

    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=10),
        st.lists(st.floats(-50, 50), min_size=2, max_size=10),
    )
    def test_antisymmetric(self, a, b):
        if np.var(a) == 0 and np.var(b) == 0:
            return
        ab = welch_t_test(a, b)
        ba = welch_t_test(b, a)
        assert ab.t == pytest.approx(-ba.t, rel=1e-9, abs=1e-12)
        assert ab.p_value == pytest.approx(ba.p_value, rel=1e-9, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            welch_t_test([1.0, 1.0], [2.0, 2.0])

    def test_short_samples_rejected(self):
        with pytest.raises(ValueError):
            welch_t_test([1.0], [1.0, 2.0])


class TestRocAuc:
    def test_perfect(self):
        assert roc_auc([0.9, 0.8], [1, 0]) == 1.0

    def test_enumerated_pairs(self):
        assert roc_auc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == 0.75

    def test_all_ties_half(self):
        assert roc_auc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    @given(st.data())
    def test_monotone_transform_invariant(self, data):
        n = data.draw(st.integers(4, 20))
        scores = np.round(
            np.asarray(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))), 3
        )  # quantized so exp() stays strictly monotone in float64
        labels = np.asarray(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
        if labels.sum() in (0, n):
            return
        auc = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores / 3.0), labels) == pytest.approx(auc, abs=1e-12)

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(10)
        scores = rng.normal(size=25).round(1)  # rounding forces ties
        labels = rng.integers(0, 2, 25)
        if labels.sum() in (0, 25):
            labels[0] = 1 - labels[0]
        wins = ties = 0
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        for sp in pos:
            for sn in neg:
                wins += sp > sn
                ties += sp == sn
        expected = (wins + 0.5 * ties) / (pos.size * neg.size)
        assert roc_auc(scores, labels) == pytest.approx(expected, abs=1e-12)


class TestCalibration:
    def test_perfect_predictor_zero_differences(self):
        data = dataset_from([3.0, 7.0, 9.0], [1, 1, 1])
        pairs = calibration_pairs([3.0, 7.0, 9.0], data)
        np.testing.assert_array_equal(pairs.difference, [0.0, 0.0, 0.0])

    def test_mean_difference_rows(self):
        data = dataset_from([10.0, 20.0], [1, 1])
        pairs = calibration_pairs([12.0, 18.0], data)
        np.testing.assert_array_equal(pairs.mean, [11.0, 19.0])
        np.testing.assert_array_equal(pairs.difference, [-2.0, 2.0])

    def test_fully_censored_empty_with_count(self):
        data = dataset_from([5.0, 6.0], [0, 0])
        pairs = calibration_pairs([4.0, 5.0], data)
        assert pairs.observed.size == 0
        assert pairs.n_censored == 2

    def test_missing_medians_counted(self):
        data = dataset_from([5.0, 6.0], [1, 1])
        pairs = calibration_pairs([None, 5.5], data)
        assert pairs.n_missing_prediction == 1
        assert pairs.observed.tolist() == [6.0]
