"""Ensembles of conditional-inference survival trees.

Each tree is grown on a bootstrap sample (with replacement by default,
carried as case-weight multiplicities) with per-node feature sampling.
A prediction for x pools, over all trees, the weighted event counts and
at-risk counts of the terminal node containing x, and forms the
product-limit curve

    S(t | x) = prod over pooled event times ( 1 - sum_n D_n / sum_n R_n )

on the grid of distinct event times of the training data, so curves from
different models are directly comparable. Variable importance is the mean
increase in out-of-bag integrated Brier score when a feature column is
permuted.

Trees are grown from seeds derived deterministically from the forest seed
and results are reduced in tree order, so fits and predictions are
reproducible for a fixed ``rng_seed`` regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from survivalkit.survival import (
    SurvivalCurve,
    SurvivalDataset,
    _km_arrays,
    _logrank_score_arrays,
    median_survival,
)
from survivalkit.tree import (
    Terminal,
    TreeConfig,
    _grow,
    route,
    route_matrix,
    tree_from_dict,
    tree_to_dict,
)

__all__ = [
    "ForestConfig",
    "SurvivalForest",
    "BinaryForest",
    "ImportanceReport",
    "MedianRisk",
    "fit_forest",
    "predict_forest_survival",
    "predict_forest_curves",
    "predict_median_and_risk",
    "variable_importance",
    "fit_binary_forest",
    "predict_binary",
    "predict_binary_many",
    "forest_to_dict",
    "forest_from_dict",
    "binary_forest_to_dict",
    "binary_forest_from_dict",
]


@dataclass(frozen=True)
class ForestConfig:
    """Ensemble parameters; ``tree.mtry=None`` resolves to ceil(sqrt(p))."""

    n_trees: int = 1000
    tree: TreeConfig = field(default_factory=TreeConfig)
    bootstrap_fraction: float = 1.0
    sample_with_replacement: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap_fraction must be in (0, 1]")


@dataclass(frozen=True)
class MedianRisk:
    median: Optional[float]
    at_risk: bool


class _NodeStats:
    """Per-terminal event/risk masses indexed against a fixed time grid."""

    __slots__ = ("event_idx", "event_mass", "sorted_times", "suffix_weight")

    def __init__(self, times, events, weights, grid):
        order = np.argsort(times, kind="stable")
        t = times[order]
        w = weights[order]
        e = events[order]
        self.sorted_times = t
        self.suffix_weight = np.concatenate((np.cumsum(w[::-1])[::-1], [0.0]))
        ev_t = t[e]
        ev_w = w[e]
        pos = np.searchsorted(grid, ev_t)
        keep = (pos < grid.size) & (np.take(grid, pos, mode="clip") == ev_t)
        self.event_idx = pos[keep]
        self.event_mass = ev_w[keep]

    def add_counts(self, grid, d_out, r_out):
        np.add.at(d_out, self.event_idx, self.event_mass)
        r_out += self.suffix_weight[np.searchsorted(self.sorted_times, grid, side="left")]

    def counts(self, grid):
        d = np.zeros(grid.size)
        np.add.at(d, self.event_idx, self.event_mass)
        r = self.suffix_weight[np.searchsorted(self.sorted_times, grid, side="left")]
        return d, r


class _BaseForest:
    """Shared bootstrap bookkeeping for the survival and binary ensembles."""

    def __init__(self, trees, inbag, config, feature_names, base_weights):
        self.trees = list(trees)
        self.inbag = np.asarray(inbag, dtype=float)
        self.config = config
        self.feature_names = list(feature_names)
        self.base_weights = np.asarray(base_weights, dtype=float)
        self._stats = {}

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_train(self) -> int:
        return self.inbag.shape[1]

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.feature_names),):
            raise ValueError(
                f"x has length {x.shape[0]}, expected {len(self.feature_names)}"
            )
        return x

    def _check_matrix(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"X has {X.shape[1]} columns, expected {len(self.feature_names)}"
            )
        return X

    def tree_weights(self, tree_index: int) -> np.ndarray:
        return self.base_weights * self.inbag[tree_index]


class SurvivalForest(_BaseForest):
    """Fitted ensemble plus the training responses it aggregates over."""

    def __init__(self, trees, inbag, config, feature_names, times, events, base_weights):
        super().__init__(trees, inbag, config, feature_names, base_weights)
        self.times = np.asarray(times, dtype=float)
        self.events = np.asarray(events, dtype=bool)
        self.grid = np.unique(self.times[self.events])

    def _node_stats(self, tree_index: int, node: Terminal) -> _NodeStats:
        key = (tree_index, id(node))
        stats = self._stats.get(key)
        if stats is None:
            idx = node.member_indices
            stats = _NodeStats(
                self.times[idx],
                self.events[idx],
                self.tree_weights(tree_index)[idx],
                self.grid,
            )
            self._stats[key] = stats
        return stats


def _derive_seeds(rng_seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(rng_seed).integers(0, 2**63 - 1, size=(n, 2))


def _draw_inbag(rng, n_rows, config) -> np.ndarray:
    size = max(1, round(config.bootstrap_fraction * n_rows))
    counts = np.zeros(n_rows)
    if config.sample_with_replacement:
        idx = rng.integers(0, n_rows, size=size)
        np.add.at(counts, idx, 1.0)
    else:
        counts[rng.choice(n_rows, size=size, replace=False)] = 1.0
    return counts


def _resolved_tree_config(config: ForestConfig, n_features: int) -> TreeConfig:
    mtry = config.tree.mtry
    if mtry is None and n_features > 0:
        mtry = math.ceil(math.sqrt(n_features))
    return replace(config.tree, mtry=mtry)


def fit_forest(data: SurvivalDataset, config: ForestConfig = ForestConfig(), n_jobs: int = 1) -> SurvivalForest:
    """Grow ``config.n_trees`` trees on bootstrap samples of the data.

    Bootstrap multiplicities enter the trees as case weights; rows with
    multiplicity zero are the tree's out-of-bag set. ``n_jobs`` > 1 fits
    trees in parallel; results are identical to the serial fit.
    """
    seeds = _derive_seeds(config.rng_seed, config.n_trees)
    tree_cfg = _resolved_tree_config(config, data.n_features)

    def one_tree(k):
        rng = np.random.default_rng(seeds[k, 0])
        counts = _draw_inbag(rng, data.n, config)
        weights = data.weights * counts
        rows = np.flatnonzero(weights > 0)

        def node_scores(r):
            return _logrank_score_arrays(data.times[r], data.events[r], weights[r])

        # terminal curves are not needed for pooled prediction; they are
        # reconstructed from the member rows at serialization time
        tree = _grow(
            data.X,
            weights,
            rows,
            replace(tree_cfg, rng_seed=int(seeds[k, 1])),
            np.random.default_rng(int(seeds[k, 1])),
            node_scores=node_scores,
            make_terminal=lambda r: Terminal(member_indices=r, curve=None, n=int(r.size)),
        )
        return tree, counts

    if n_jobs == 1:
        fitted = [one_tree(k) for k in range(config.n_trees)]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(one_tree)(k) for k in range(config.n_trees))
    trees = [t for t, _ in fitted]
    inbag = np.vstack([c for _, c in fitted])
    return SurvivalForest(
        trees=trees,
        inbag=inbag,
        config=config,
        feature_names=data.feature_names,
        times=data.times,
        events=data.events,
        base_weights=data.weights,
    )


def _aggregate_curve(forest: SurvivalForest, d, r) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        factors = np.where(r > 0, 1.0 - d / np.where(r > 0, r, 1.0), 1.0)
    return np.cumprod(factors, axis=-1)


def predict_forest_survival(forest: SurvivalForest, x) -> SurvivalCurve:
    """Pooled product-limit survival curve for one covariate vector."""
    x = forest._check_x(x)
    k = forest.grid.size
    d = np.zeros(k)
    r = np.zeros(k)
    for ti, tree in enumerate(forest.trees):
        node = route(tree, x)
        forest._node_stats(ti, node).add_counts(forest.grid, d, r)
    return SurvivalCurve(times=forest.grid, probs=_aggregate_curve(forest, d, r))


def predict_forest_curves(
    forest: SurvivalForest, X, tree_mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Survival probabilities for many rows on ``forest.grid``.

    Returns an (n_rows, grid size) matrix. ``tree_mask[t, i]`` restricts row
    i to trees with a True entry (used for out-of-bag prediction); rows with
    no contributing tree come back as all ones.
    """
    X = forest._check_matrix(X)
    n = X.shape[0]
    k = forest.grid.size
    d = np.zeros((n, k))
    r = np.zeros((n, k))
    all_rows = np.arange(n)
    for ti, tree in enumerate(forest.trees):
        rows = all_rows if tree_mask is None else np.flatnonzero(tree_mask[ti])
        if rows.size == 0:
            continue
        for node, local_idx in route_matrix(tree, X[rows]):
            dvec, rvec = forest._node_stats(ti, node).counts(forest.grid)
            target = rows[local_idx]
            d[target] += dvec
            r[target] += rvec
    return _aggregate_curve(forest, d, r)


def _median_from_probs(grid, probs_row) -> Optional[float]:
    hit = np.flatnonzero(probs_row <= 0.5)
    if hit.size == 0:
        return None
    return float(grid[hit[0]])


def predict_median_and_risk(forest: SurvivalForest, x, horizon: float) -> MedianRisk:
    """Median of the pooled curve plus the at-risk flag (median <= horizon).

    A curve that never reaches 0.5 has no median; such a profile is not at
    risk within the horizon.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    med = median_survival(predict_forest_survival(forest, x))
    return MedianRisk(median=med, at_risk=med is not None and med <= horizon)


@dataclass(frozen=True)
class ImportanceReport:
    """Permutation importance per feature: OOB IBS increase, larger = more important."""

    feature_names: list
    importance: np.ndarray
    stderr: np.ndarray
    rank: np.ndarray
    baseline_ibs: float
    n_repeats: int

    def __post_init__(self):
        for name in ("importance", "stderr"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "rank", np.asarray(self.rank, dtype=int))
        p = len(self.feature_names)
        if sorted(self.rank.tolist()) != list(range(1, p + 1)):
            raise ValueError("ranks must be a permutation of 1..p")


def variable_importance(
    forest: SurvivalForest,
    data: SurvivalDataset,
    n_repeats: int = 5,
    rng_seed: int = 0,
    horizon: Optional[float] = None,
) -> ImportanceReport:
    """Out-of-bag permutation importance measured by integrated Brier score.

    Every row is predicted only by trees where it is out-of-bag; permuting a
    feature column over those rows and recomputing the OOB IBS measures how
    much the ensemble leans on that feature. Rows that are in-bag everywhere
    are skipped; if no row has an out-of-bag tree the forest carries no
    honest error signal and a ValueError is raised.
    """
    from survivalkit.evaluation import brier_curve, default_grid

    if list(data.feature_names) != forest.feature_names or data.n != forest.n_train:
        raise ValueError("schema mismatch: forest was not fitted on this dataset")
    oob = forest.inbag == 0
    usable = np.flatnonzero(oob.any(axis=0))
    if usable.size == 0:
        raise ValueError("no out-of-bag data")
    sub = data.take(usable)
    mask = oob[:, usable]
    grid = default_grid(sub, horizon=horizon)

    def oob_ibs(X_eval):
        probs = predict_forest_curves(forest, X_eval, tree_mask=mask)
        curves = [SurvivalCurve(times=forest.grid, probs=row) for row in probs]
        return brier_curve(curves, sub, grid).ibs

    baseline = oob_ibs(sub.X)
    rng = np.random.default_rng(rng_seed)
    p = len(forest.feature_names)
    importance = np.zeros(p)
    stderr = np.zeros(p)
    for f in range(p):
        deltas = np.empty(n_repeats)
        for rep in range(n_repeats):
            X_perm = sub.X.copy()
            X_perm[:, f] = X_perm[rng.permutation(usable.size), f]
            deltas[rep] = oob_ibs(X_perm) - baseline
        importance[f] = deltas.mean()
        stderr[f] = deltas.std(ddof=1) / math.sqrt(n_repeats) if n_repeats > 1 else 0.0
    order = np.argsort(-importance, kind="stable")
    rank = np.empty(p, dtype=int)
    rank[order] = np.arange(1, p + 1)
    return ImportanceReport(
        feature_names=list(forest.feature_names),
        importance=importance,
        stderr=stderr,
        rank=rank,
        baseline_ibs=baseline,
        n_repeats=n_repeats,
    )


# ---------------------------------------------------------------------------
# Binary-response mode: same tree machinery, labels in place of log-rank scores


class BinaryForest(_BaseForest):
    """Conditional-inference ensemble on a 0/1 response.

    Terminal summaries are weighted label fractions; a prediction pools
    weighted churner counts over node sizes across trees, yielding a
    probability instead of a curve.
    """

    def __init__(self, trees, inbag, config, feature_names, labels, base_weights):
        super().__init__(trees, inbag, config, feature_names, base_weights)
        self.labels = np.asarray(labels, dtype=float)

    def _node_masses(self, tree_index: int, node: Terminal):
        key = (tree_index, id(node))
        masses = self._stats.get(key)
        if masses is None:
            idx = node.member_indices
            w = self.tree_weights(tree_index)[idx]
            masses = (float(w @ self.labels[idx]), float(w.sum()))
            self._stats[key] = masses
        return masses


def fit_binary_forest(
    X, labels, config: ForestConfig = ForestConfig(), feature_names=None, n_jobs: int = 1
) -> BinaryForest:
    """Fit the ensemble with the rank statistic applied to 0/1 labels."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels, dtype=float)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels must align with X rows")
    if not set(np.unique(labels)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if np.unique(labels).size < 2:
        raise ValueError("degenerate labels: both classes required")
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(X.shape[1])]
    n = X.shape[0]
    seeds = _derive_seeds(config.rng_seed, config.n_trees)
    tree_cfg = _resolved_tree_config(config, X.shape[1])

    def one_tree(k):
        rng = np.random.default_rng(seeds[k, 0])
        counts = _draw_inbag(rng, n, config)
        rows = np.flatnonzero(counts > 0)
        grown = _grow(
            X,
            counts,
            rows,
            replace(tree_cfg, rng_seed=int(seeds[k, 1])),
            np.random.default_rng(int(seeds[k, 1])),
            node_scores=lambda r: labels[r],
            make_terminal=lambda r: Terminal(member_indices=r, curve=None, n=int(r.size)),
        )
        return grown, counts

    if n_jobs == 1:
        fitted = [one_tree(k) for k in range(config.n_trees)]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(one_tree)(k) for k in range(config.n_trees))
    return BinaryForest(
        trees=[t for t, _ in fitted],
        inbag=np.vstack([c for _, c in fitted]),
        config=config,
        feature_names=list(feature_names),
        labels=labels,
        base_weights=np.ones(n),
    )


def predict_binary(forest: BinaryForest, x) -> float:
    """Pooled churn probability: sum of node churner masses over node sizes."""
    x = forest._check_x(x)
    num = 0.0
    den = 0.0
    for ti, tree in enumerate(forest.trees):
        churn, size = forest._node_masses(ti, route(tree, x))
        num += churn
        den += size
    return num / den


def predict_binary_many(forest: BinaryForest, X) -> np.ndarray:
    X = forest._check_matrix(X)
    num = np.zeros(X.shape[0])
    den = np.zeros(X.shape[0])
    for ti, tree in enumerate(forest.trees):
        for node, idx in route_matrix(tree, X):
            churn, size = forest._node_masses(ti, node)
            num[idx] += churn
            den[idx] += size
    return num / den


# ---------------------------------------------------------------------------
# Serialization


def _config_to_dict(config: ForestConfig) -> dict:
    return {
        "n_trees": config.n_trees,
        "alpha": config.tree.alpha,
        "min_node_size": config.tree.min_node_size,
        "min_split_size": config.tree.min_split_size,
        "mtry": config.tree.mtry,
        "tree_rng_seed": config.tree.rng_seed,
        "bootstrap_fraction": config.bootstrap_fraction,
        "sample_with_replacement": config.sample_with_replacement,
        "rng_seed": config.rng_seed,
    }


def _config_from_dict(doc: dict) -> ForestConfig:
    return ForestConfig(
        n_trees=int(doc["n_trees"]),
        tree=TreeConfig(
            alpha=float(doc["alpha"]),
            min_node_size=int(doc["min_node_size"]),
            min_split_size=int(doc["min_split_size"]),
            mtry=None if doc.get("mtry") is None else int(doc["mtry"]),
            rng_seed=int(doc.get("tree_rng_seed", 0)),
        ),
        bootstrap_fraction=float(doc["bootstrap_fraction"]),
        sample_with_replacement=bool(doc["sample_with_replacement"]),
        rng_seed=int(doc["rng_seed"]),
    )


def forest_to_dict(forest: SurvivalForest) -> dict:
    """JSON document: tree array, config, inbag counts, training responses."""

    def curve_fields(tree_index):
        def extra(node):
            if node.curve is not None:
                return {}
            idx = node.member_indices
            t, probs = _km_arrays(
                forest.times[idx], forest.events[idx], forest.tree_weights(tree_index)[idx]
            )
            return {"times": t.tolist(), "probs": probs.tolist()}

        return extra

    return {
        "model": "forest",
        "feature_names": forest.feature_names,
        "config": _config_to_dict(forest.config),
        "inbag": forest.inbag.astype(int).tolist(),
        "train": {
            "times": forest.times.tolist(),
            "events": forest.events.astype(int).tolist(),
            "weights": forest.base_weights.tolist(),
        },
        "trees": [
            tree_to_dict(t, terminal_extra=curve_fields(k)) for k, t in enumerate(forest.trees)
        ],
    }


def forest_from_dict(doc: dict) -> SurvivalForest:
    return SurvivalForest(
        trees=[tree_from_dict(t) for t in doc["trees"]],
        inbag=np.asarray(doc["inbag"], dtype=float),
        config=_config_from_dict(doc["config"]),
        feature_names=list(doc["feature_names"]),
        times=np.asarray(doc["train"]["times"], dtype=float),
        events=np.asarray(doc["train"]["events"], dtype=bool),
        base_weights=np.asarray(doc["train"]["weights"], dtype=float),
    )


def binary_forest_to_dict(forest: BinaryForest) -> dict:
    def extra(node):
        idx = node.member_indices
        total = float(idx.size)
        return {"churn_rate": float(forest.labels[idx].mean()) if total else 0.0}

    return {
        "model": "binary-forest",
        "feature_names": forest.feature_names,
        "config": _config_to_dict(forest.config),
        "inbag": forest.inbag.astype(int).tolist(),
        "train": {"labels": forest.labels.astype(int).tolist()},
        "trees": [tree_to_dict(t, terminal_extra=extra) for t in forest.trees],
    }


def binary_forest_from_dict(doc: dict) -> BinaryForest:
    return BinaryForest(
        trees=[tree_from_dict(t) for t in doc["trees"]],
        inbag=np.asarray(doc["inbag"], dtype=float),
        config=_config_from_dict(doc["config"]),
        feature_names=list(doc["feature_names"]),
        labels=np.asarray(doc["train"]["labels"], dtype=float),
        base_weights=np.ones(len(doc["train"]["labels"])),
    )
