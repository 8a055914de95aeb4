import json

import numpy as np
import pytest
from hypothesis import given

from helpers import censored_samples, random_censored_data, two_cluster_data
from survivalkit import SurvivalDataset, kaplan_meier
from survivalkit.evaluation import roc_auc
from survivalkit.forest import (
    ForestConfig,
    binary_forest_from_dict,
    binary_forest_to_dict,
    fit_binary_forest,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
    predict_binary,
    predict_binary_many,
    predict_forest_curves,
    predict_forest_survival,
    predict_median_and_risk,
    variable_importance,
)
from survivalkit.tree import TreeConfig

OPEN = TreeConfig(alpha=0.05, min_node_size=5, min_split_size=10)
NEVER_SPLIT = TreeConfig(alpha=0.5, min_node_size=1, min_split_size=10_000)


def no_bootstrap(n_trees, tree, seed=0):
    return ForestConfig(
        n_trees=n_trees,
        tree=tree,
        sample_with_replacement=False,
        bootstrap_fraction=1.0,
        rng_seed=seed,
    )


class TestAggregation:
    def test_root_only_forest_equals_pooled_km(self):
        data = random_censored_data(n=50, seed=1)
        for n_trees in (1, 5):
            forest = fit_forest(data, no_bootstrap(n_trees, NEVER_SPLIT))
            km = kaplan_meier(data)
            curve = predict_forest_survival(forest, data.X[0])
            assert np.max(np.abs(curve.probs - km.values_at(curve.times))) <= 1e-12

    def test_two_bootstrap_trees_equal_merged_multiset_km(self):
        data = SurvivalDataset(
            [1.0, 2.0, 3.0, 4.0, 5.0], [1, 1, 0, 1, 1], np.zeros((5, 1)), ["x"]
        )
        forest = fit_forest(data, ForestConfig(n_trees=2, tree=NEVER_SPLIT, rng_seed=11))
        merged = np.concatenate(
            [np.repeat(np.arange(5), forest.inbag[k].astype(int)) for k in range(2)]
        )
        km = kaplan_meier(data.take(merged))
        curve = predict_forest_survival(forest, [0.0])
        assert np.max(np.abs(curve.probs - km.values_at(curve.times))) <= 1e-12

    @given(censored_samples(max_n=20))
    def test_curves_valid_on_fuzzed_data(self, sample):
        times, events = sample
        rng = np.random.default_rng(3)
        data = SurvivalDataset(times, events, rng.normal(size=(times.size, 2)), ["a", "b"])
        forest = fit_forest(
            data, ForestConfig(n_trees=5, tree=TreeConfig(alpha=0.3, min_node_size=1, min_split_size=2), rng_seed=1)
        )
        curve = predict_forest_survival(forest, rng.normal(size=2))
        assert np.all((curve.probs >= 0) & (curve.probs <= 1))
        assert np.all(np.diff(curve.probs) <= 1e-15)

    def test_batch_matches_single(self):
        data = two_cluster_data(n=60, seed=2)
        forest = fit_forest(data, ForestConfig(n_trees=25, tree=OPEN, rng_seed=5))
        probs = predict_forest_curves(forest, data.X[:7])
        for i in range(7):
            single = predict_forest_survival(forest, data.X[i])
            np.testing.assert_array_equal(probs[i], single.probs)

    def test_dimension_mismatch(self):
        data = two_cluster_data(n=40, seed=2)
        forest = fit_forest(data, ForestConfig(n_trees=3, tree=OPEN, rng_seed=5))
        with pytest.raises(ValueError):
            predict_forest_survival(forest, [1.0, 2.0, 3.0])


class TestDeterminismAndConfig:
    def test_same_seed_identical_serialized_forests(self):
        data = two_cluster_data(n=50, seed=7)
        config = ForestConfig(n_trees=12, tree=OPEN, rng_seed=21)
        doc1 = json.dumps(forest_to_dict(fit_forest(data, config)), sort_keys=True)
        doc2 = json.dumps(forest_to_dict(fit_forest(data, config)), sort_keys=True)
        assert doc1 == doc2

    def test_different_seeds_differ(self):
        data = two_cluster_data(n=50, seed=7)
        d1 = forest_to_dict(fit_forest(data, ForestConfig(n_trees=5, tree=OPEN, rng_seed=1)))
        d2 = forest_to_dict(fit_forest(data, ForestConfig(n_trees=5, tree=OPEN, rng_seed=2)))
        assert d1["inbag"] != d2["inbag"]

    def test_parallel_fit_matches_serial(self):
        data = two_cluster_data(n=50, seed=7)
        config = ForestConfig(n_trees=8, tree=OPEN, rng_seed=3)
        serial = forest_to_dict(fit_forest(data, config, n_jobs=1))
        parallel = forest_to_dict(fit_forest(data, config, n_jobs=2))
        assert json.dumps(serial) == json.dumps(parallel)

    def test_constant_extra_column_leaves_predictions_unchanged(self):
        data = two_cluster_data(n=60, seed=9)
        with_const = SurvivalDataset(
            data.times,
            data.events,
            np.column_stack([data.X, np.full(data.n, 3.25)]),
            [*data.feature_names, "constant"],
        )
        # mtry covers every feature in both fits, so the sampler draws nothing
        f1 = fit_forest(data, ForestConfig(n_trees=10, tree=TreeConfig(alpha=0.05, min_node_size=5, min_split_size=10, mtry=3), rng_seed=4))
        f2 = fit_forest(with_const, ForestConfig(n_trees=10, tree=TreeConfig(alpha=0.05, min_node_size=5, min_split_size=10, mtry=3), rng_seed=4))
        p1 = predict_forest_curves(f1, data.X[:6])
        p2 = predict_forest_curves(f2, with_const.X[:6])
        np.testing.assert_array_equal(p1, p2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)
        with pytest.raises(ValueError):
            ForestConfig(bootstrap_fraction=0.0)

    def test_oob_medians_separate_clusters(self):
        data = two_cluster_data(n=120, seed=10)
        forest = fit_forest(data, ForestConfig(n_trees=100, tree=OPEN, rng_seed=6))
        oob = forest.inbag == 0
        probs = predict_forest_curves(forest, data.X, tree_mask=oob)
        medians = []
        for row in probs:
            hit = np.flatnonzero(row <= 0.5)
            medians.append(forest.grid[hit[0]] if hit.size else np.inf)
        medians = np.array(medians)
        low = medians[data.X[:, 0] < 0]
        high = medians[data.X[:, 0] > 0]
        assert np.median(low) == pytest.approx(10.0, abs=3.0)
        assert np.median(high) == pytest.approx(100.0, abs=3.0)


class TestMedianAndRisk:
    def test_loyal_profile_not_at_risk(self):
        # heavy censoring keeps the pooled curve above one half
        data = SurvivalDataset(
            [50.0] * 10, [False] * 10 , np.zeros((10, 1)), ["x"]
        )
        forest = fit_forest(data, no_bootstrap(3, NEVER_SPLIT))
        result = predict_median_and_risk(forest, [0.0], horizon=30.0)
        assert result.median is None
        assert result.at_risk is False

    def test_median_within_horizon_flags_risk(self):
        data = two_cluster_data(n=40, seed=3)
        forest = fit_forest(data, ForestConfig(n_trees=20, tree=OPEN, rng_seed=2))
        result = predict_median_and_risk(forest, [-1.0, 5.0], horizon=30.0)
        assert result.median == pytest.approx(10.0, abs=3.0)
        assert result.at_risk is True
        # halving the horizon below the median clears the flag
        shorter = predict_median_and_risk(forest, [-1.0, 5.0], horizon=result.median / 2)
        assert shorter.at_risk is False

    def test_horizon_validated(self):
        data = two_cluster_data(n=40, seed=3)
        forest = fit_forest(data, ForestConfig(n_trees=5, tree=OPEN, rng_seed=2))
        with pytest.raises(ValueError):
            predict_median_and_risk(forest, [-1.0, 5.0], horizon=0.0)


class TestVariableImportance:
    def test_informative_feature_ranks_first_noise_near_zero(self):
        data = two_cluster_data(n=150, seed=11)
        config = ForestConfig(
            n_trees=60,
            tree=TreeConfig(alpha=0.05, min_node_size=20, min_split_size=100, mtry=2),
            rng_seed=1,
        )
        forest = fit_forest(data, config)
        report = variable_importance(forest, data, n_repeats=10, rng_seed=3)
        assert report.rank[0] == 1
        assert report.importance[0] > 0
        assert abs(report.importance[1]) <= 2 * report.stderr[1]

    def test_root_only_forest_importance_exactly_zero(self):
        data = two_cluster_data(n=60, seed=13)
        forest = fit_forest(data, ForestConfig(n_trees=10, tree=NEVER_SPLIT, rng_seed=1))
        report = variable_importance(forest, data, n_repeats=3, rng_seed=5)
        np.testing.assert_array_equal(report.importance, [0.0, 0.0])

    def test_all_inbag_rejected(self):
        data = two_cluster_data(n=40, seed=13)
        forest = fit_forest(data, no_bootstrap(4, NEVER_SPLIT))
        with pytest.raises(ValueError, match="no out-of-bag data"):
            variable_importance(forest, data)

    def test_schema_checked(self):
        data = two_cluster_data(n=40, seed=13)
        forest = fit_forest(data, ForestConfig(n_trees=4, tree=OPEN, rng_seed=1))
        other = two_cluster_data(n=30, seed=14)
        with pytest.raises(ValueError, match="schema mismatch"):
            variable_importance(forest, other)

    def test_ranks_are_permutation(self):
        data = random_censored_data(n=80, seed=15, n_features=4)
        forest = fit_forest(data, ForestConfig(n_trees=15, tree=OPEN, rng_seed=2))
        report = variable_importance(forest, data, n_repeats=2, rng_seed=1)
        assert sorted(report.rank.tolist()) == [1, 2, 3, 4]


class TestBinaryForest:
    @staticmethod
    def separable(n=120, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        y = (X[:, 0] > 0).astype(int)
        return X, y

    def test_perfectly_separable_auc_one(self):
        X, y = self.separable(n=160, seed=1)
        forest = fit_binary_forest(
            X[:100], y[:100], ForestConfig(n_trees=30, tree=OPEN, rng_seed=2)
        )
        probs = predict_binary_many(forest, X[100:])
        assert roc_auc(probs, y[100:]) == 1.0

    def test_root_only_gives_global_rate(self):
        X, y = self.separable(n=80, seed=2)
        forest = fit_binary_forest(X, y, no_bootstrap(5, NEVER_SPLIT))
        assert predict_binary(forest, X[0]) == pytest.approx(y.mean(), abs=1e-12)

    def test_single_class_rejected(self):
        X, _ = self.separable(n=20, seed=3)
        with pytest.raises(ValueError, match="degenerate labels"):
            fit_binary_forest(X, np.zeros(20))

    def test_non_binary_labels_rejected(self):
        X, _ = self.separable(n=20, seed=3)
        with pytest.raises(ValueError):
            fit_binary_forest(X, np.arange(20))

    def test_single_matches_many_and_roundtrip(self):
        X, y = self.separable(n=100, seed=4)
        forest = fit_binary_forest(X, y, ForestConfig(n_trees=20, tree=OPEN, rng_seed=5))
        probs = predict_binary_many(forest, X[:10])
        for i in range(10):
            assert predict_binary(forest, X[i]) == probs[i]
        back = binary_forest_from_dict(json.loads(json.dumps(binary_forest_to_dict(forest))))
        np.testing.assert_array_equal(predict_binary_many(back, X[:10]), probs)


class TestForestSerialization:
    def test_roundtrip_identical_predictions(self):
        data = two_cluster_data(n=60, seed=20)
        forest = fit_forest(data, ForestConfig(n_trees=15, tree=OPEN, rng_seed=9))
        doc = json.loads(json.dumps(forest_to_dict(forest)))
        assert doc["model"] == "forest"
        assert {"trees", "config", "inbag", "train"} <= set(doc)
        back = forest_from_dict(doc)
        X = data.X[:8]
        np.testing.assert_array_equal(
            predict_forest_curves(back, X), predict_forest_curves(forest, X)
        )
