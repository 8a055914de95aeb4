"""A single conditional-inference survival tree.

Split variables are selected by hypothesis tests on linear rank statistics
(log-rank scores for censored responses), with a Bonferroni correction over
the features tested at the node; growth stops when the adjusted p-value
exceeds alpha or node-size limits are hit, so trees stop rather than prune.
Split points maximize the standardized two-sample log-rank statistic, which
keeps variable selection unbiased with respect to the number of distinct
values a feature has.

Log-rank scores are recomputed from each node's own (weighted) rows, so the
split criterion is exactly the weighted two-sample log-rank statistic of
the candidate daughter nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import erfc

from survivalkit.survival import (
    SurvivalCurve,
    SurvivalDataset,
    _km_arrays,
    _logrank_score_arrays,
)

__all__ = [
    "TreeConfig",
    "Internal",
    "Terminal",
    "TreeNode",
    "AssociationTest",
    "SplitCandidate",
    "rank_association_test",
    "best_split",
    "grow_tree",
    "predict_tree",
    "tree_to_dict",
    "tree_from_dict",
]


@dataclass(frozen=True)
class TreeConfig:
    """Stopping and sampling parameters for tree growth.

    ``mtry`` is the number of candidate features tested per node; None tests
    all of them (the standalone-tree default; forests default to
    ceil(sqrt(p))). Node sizes are sums of case weights.
    """

    alpha: float = 0.05
    min_node_size: int = 20
    min_split_size: int = 60
    mtry: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.min_split_size < 2 * self.min_node_size:
            raise ValueError("min_split_size must be >= 2 * min_node_size")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")


@dataclass(frozen=True)
class Terminal:
    """Leaf node: the training rows it holds and their Kaplan-Meier curve.

    ``curve`` is None when the payload lives elsewhere: binary-response
    trees summarize nodes by the weighted label fraction, and forest-grown
    trees recompute node curves from member rows only when serialized.
    """

    member_indices: np.ndarray
    curve: Optional[SurvivalCurve]
    n: int

    def __post_init__(self):
        idx = np.asarray(self.member_indices, dtype=int)
        idx.setflags(write=False)
        object.__setattr__(self, "member_indices", idx)
        if idx.size == 0:
            raise ValueError("terminal node must hold at least one row")


@dataclass(frozen=True)
class Internal:
    feature_index: int
    split_threshold: float
    p_value: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Internal, Terminal]


@dataclass(frozen=True)
class AssociationTest:
    statistic: float
    p_value: float


def _chi2_sf_1df(stat: float) -> float:
    # survival function of the 1-df chi-square; erfc form avoids the
    # per-call overhead of scipy's distribution machinery
    return math.erfc(math.sqrt(stat / 2.0))


def _association_pvalues(scores, X_cand, weights) -> np.ndarray:
    """p-values of rank_association_test for every column of X_cand at once."""
    total = weights.sum()
    if total <= 1:
        return np.ones(X_cand.shape[1])
    s_mean = float(weights @ scores) / total
    s_var = float(weights @ (scores - s_mean) ** 2) / total
    if s_var <= 0:
        return np.ones(X_cand.shape[1])
    wx = weights[:, None] * X_cand
    sum_wx = wx.sum(axis=0)
    sum_wx2 = np.einsum("ij,ij->j", wx, X_cand)
    var_t = s_var * (total * sum_wx2 - sum_wx**2) / (total - 1)
    t_obs = scores @ wx
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = np.where(var_t > 0, (t_obs - sum_wx * s_mean) ** 2 / var_t, 0.0)
    p = erfc(np.sqrt(stat / 2.0))
    return np.where(var_t > 0, p, 1.0)


@dataclass(frozen=True)
class SplitCandidate:
    threshold: float
    criterion: float


def _perm_moments(scores, weights):
    """Weighted permutation mean and variance of the score influence values."""
    total = weights.sum()
    mean = float(weights @ scores) / total
    var = float(weights @ (scores - mean) ** 2) / total
    return total, mean, var


def rank_association_test(scores, feature_values, weights=None) -> AssociationTest:
    """Permutation test of association between a numeric feature and scores.

    The linear statistic T = sum(w * x * score) is standardized by its
    closed-form permutation mean and variance and referred to the chi-square
    distribution with one degree of freedom. A feature that is constant on
    the weighted rows carries no information and gets p-value 1.
    """
    scores = np.asarray(scores, dtype=float)
    x = np.asarray(feature_values, dtype=float)
    if weights is None:
        weights = np.ones_like(scores)
    else:
        weights = np.asarray(weights, dtype=float)
    if not (scores.shape == x.shape == weights.shape):
        raise ValueError("scores, feature_values and weights must have equal length")

    total, s_mean, s_var = _perm_moments(scores, weights)
    if total <= 1 or s_var <= 0:
        return AssociationTest(statistic=0.0, p_value=1.0)
    wx = weights * x
    sum_wx = wx.sum()
    sum_wx2 = float(weights @ (x * x))
    var_t = s_var * (total * sum_wx2 - sum_wx**2) / (total - 1)
    if var_t <= 0:  # constant feature
        return AssociationTest(statistic=0.0, p_value=1.0)
    t_obs = float(wx @ scores)
    mu_t = sum_wx * s_mean
    stat = (t_obs - mu_t) ** 2 / var_t
    return AssociationTest(statistic=stat, p_value=_chi2_sf_1df(stat))


def _split_scan(x, scores, weights, min_node_size):
    """Standardized two-sample statistic at every admissible midpoint.

    Returns (thresholds, criteria) over midpoints between consecutive
    distinct sorted values of x, keeping only splits whose children both
    carry at least ``min_node_size`` weight.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = weights[order]
    ss = scores[order]
    boundary = np.flatnonzero(xs[1:] != xs[:-1])  # split after these positions
    if boundary.size == 0:
        return None
    total, s_mean, s_var = _perm_moments(scores, weights)
    if total <= 1 or s_var <= 0:
        return None
    cw = np.cumsum(ws)[boundary]
    ct = np.cumsum(ws * ss)[boundary]
    admissible = (cw >= min_node_size) & (total - cw >= min_node_size)
    if not np.any(admissible):
        return None
    var_t = s_var * cw * (total - cw) / (total - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        crit = np.where(var_t > 0, (ct - cw * s_mean) ** 2 / var_t, -np.inf)
    crit = np.where(admissible, crit, -np.inf)
    thresholds = (xs[boundary] + xs[boundary + 1]) / 2.0
    return thresholds, crit


def best_split(
    data: SurvivalDataset, rows, feature: int, config: TreeConfig = TreeConfig()
) -> Optional[SplitCandidate]:
    """Best threshold on one feature for the rows of a node, or None.

    Scans all midpoints between consecutive distinct values, maximizing the
    standardized two-sample log-rank statistic between the rows at or below
    the threshold and the rest, subject to both children carrying at least
    ``config.min_node_size`` weight.
    """
    rows = np.asarray(rows, dtype=int)
    scores = _logrank_score_arrays(
        data.times[rows], data.events[rows], data.weights[rows]
    )
    scan = _split_scan(
        data.X[rows, feature], scores, data.weights[rows], config.min_node_size
    )
    if scan is None:
        return None
    thresholds, crit = scan
    best = int(np.argmax(crit))
    if not np.isfinite(crit[best]):
        return None
    return SplitCandidate(threshold=float(thresholds[best]), criterion=float(crit[best]))


def _grow(X, weights, rows, config, rng, node_scores, make_terminal, depth=0):
    """Recursive node construction shared by survival and binary trees.

    ``node_scores(rows)`` returns the response scores of a node's rows;
    ``make_terminal(rows)`` builds the leaf payload.
    """
    w = weights[rows]
    n_features = X.shape[1]
    if w.sum() < config.min_split_size or n_features == 0:
        return make_terminal(rows)

    if config.mtry is not None and config.mtry < n_features:
        candidates = np.sort(rng.choice(n_features, size=config.mtry, replace=False))
    else:
        candidates = np.arange(n_features)

    scores = node_scores(rows)
    pvals = _association_pvalues(scores, X[np.ix_(rows, candidates)], w)
    best = int(np.argmin(pvals))  # first minimum wins ties, in candidate order
    best_feature = int(candidates[best])
    p_adjusted = min(1.0, float(pvals[best]) * len(candidates))
    if p_adjusted > config.alpha:
        return make_terminal(rows)

    scan = _split_scan(X[rows, best_feature], scores, w, config.min_node_size)
    if scan is None:
        return make_terminal(rows)
    thresholds, crit = scan
    pick = int(np.argmax(crit))
    if not np.isfinite(crit[pick]):
        return make_terminal(rows)
    threshold = float(thresholds[pick])

    go_left = X[rows, best_feature] <= threshold
    left = _grow(X, weights, rows[go_left], config, rng, node_scores, make_terminal, depth + 1)
    right = _grow(X, weights, rows[~go_left], config, rng, node_scores, make_terminal, depth + 1)
    return Internal(
        feature_index=best_feature,
        split_threshold=threshold,
        p_value=p_adjusted,
        left=left,
        right=right,
    )


def grow_tree(data: SurvivalDataset, rows=None, config: TreeConfig = TreeConfig()) -> TreeNode:
    """Grow a conditional-inference survival tree over the given rows.

    Each node tests ``mtry`` sampled features for association between the
    node's log-rank scores and the feature, Bonferroni-adjusts the smallest
    p-value by the number of tested features, and splits only while the
    adjusted p-value stays at or below alpha. Terminals carry their member
    rows and the weighted Kaplan-Meier curve over them. Deterministic for a
    fixed ``config.rng_seed``.
    """
    if rows is None:
        rows = np.arange(data.n)
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.rng_seed)

    def node_scores(r):
        return _logrank_score_arrays(data.times[r], data.events[r], data.weights[r])

    def make_terminal(r):
        t, probs = _km_arrays(data.times[r], data.events[r], data.weights[r])
        return Terminal(
            member_indices=r, curve=SurvivalCurve(times=t, probs=probs), n=int(r.size)
        )

    return _grow(data.X, data.weights, rows, config, rng, node_scores, make_terminal)


def route(tree: TreeNode, x) -> Terminal:
    """Follow the split thresholds of a fitted tree down to a terminal."""
    x = np.asarray(x, dtype=float)
    node = tree
    while isinstance(node, Internal):
        if node.feature_index >= x.shape[0]:
            raise ValueError(
                f"x has length {x.shape[0]} but the tree splits on feature "
                f"{node.feature_index}"
            )
        node = node.left if x[node.feature_index] <= node.split_threshold else node.right
    return node


def predict_tree(tree: TreeNode, x) -> Terminal:
    """Terminal node for covariate vector x: its member rows and K-M curve."""
    return route(tree, x)


def route_matrix(tree: TreeNode, X) -> list:
    """Partition row indices of X by terminal node: list of (terminal, indices)."""
    X = np.asarray(X, dtype=float)
    out = []

    def walk(node, idx):
        if idx.size == 0:
            return
        if isinstance(node, Terminal):
            out.append((node, idx))
            return
        go_left = X[idx, node.feature_index] <= node.split_threshold
        walk(node.left, idx[go_left])
        walk(node.right, idx[~go_left])

    walk(tree, np.arange(X.shape[0]))
    return out


def tree_to_dict(node: TreeNode, terminal_extra: Optional[Callable] = None) -> dict:
    """Nested JSON document for a fitted tree.

    Terminals serialize as ``{"terminal": {"n", "times", "probs", "members"}}``
    (curve fields omitted for binary trees); ``terminal_extra(node)`` may
    supply extra terminal fields.
    """
    if isinstance(node, Terminal):
        doc = {"n": node.n, "members": node.member_indices.tolist()}
        if node.curve is not None:
            doc["times"] = node.curve.times.tolist()
            doc["probs"] = node.curve.probs.tolist()
        if terminal_extra is not None:
            doc.update(terminal_extra(node))
        return {"terminal": doc}
    return {
        "feature": node.feature_index,
        "threshold": node.split_threshold,
        "p_value": node.p_value,
        "left": tree_to_dict(node.left, terminal_extra),
        "right": tree_to_dict(node.right, terminal_extra),
    }


def tree_from_dict(doc: dict) -> TreeNode:
    if "terminal" in doc:
        t = doc["terminal"]
        curve = None
        if "times" in t:
            curve = SurvivalCurve(
                times=np.asarray(t["times"], dtype=float),
                probs=np.asarray(t["probs"], dtype=float),
            )
        return Terminal(
            member_indices=np.asarray(t["members"], dtype=int), curve=curve, n=int(t["n"])
        )
    return Internal(
        feature_index=int(doc["feature"]),
        split_threshold=float(doc["threshold"]),
        p_value=float(doc["p_value"]),
        left=tree_from_dict(doc["left"]),
        right=tree_from_dict(doc["right"]),
    )
