"""Censoring-aware model assessment.

The time-dependent Brier score weights observed statuses by the inverse of
the censoring survival function (reverse Kaplan-Meier of the censoring
times), following the standard decomposition: past events contribute
S(t|x)^2 / G(T-), subjects still at risk contribute (1 - S(t|x))^2 / G(t),
and subjects censored before t contribute nothing. The integrated Brier
score averages BS(t) over [0, tau] by the trapezoid rule.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from scipy.integrate import trapezoid

from survivalkit.cox import CoxConfig, fit_cox, predict_cox_survival
from survivalkit.forest import ForestConfig, fit_forest, predict_forest_curves
from survivalkit.survival import SurvivalCurve, SurvivalDataset, kaplan_meier

__all__ = [
    "ErrorCurve",
    "CalibrationPairs",
    "BootstrapCvResult",
    "WelchResult",
    "brier_curve",
    "bootstrap_cv_error",
    "welch_t_test",
    "roc_auc",
    "calibration_pairs",
    "default_grid",
    "km_spec",
    "cox_spec",
    "forest_spec",
]

# A model spec is a factory: fit(train) -> predict(X) -> list of SurvivalCurve.
ModelSpec = Callable[[SurvivalDataset], Callable[[np.ndarray], list]]


@dataclass(frozen=True)
class ErrorCurve:
    """Brier score over a time grid and its normalized integral."""

    times: np.ndarray
    bs: np.ndarray
    ibs: float

    def __post_init__(self):
        for name in ("times", "bs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.times.shape != self.bs.shape:
            raise ValueError("times and bs must align")


@dataclass(frozen=True)
class CalibrationPairs:
    """Observed event times vs predicted medians, uncensored rows only.

    ``mean`` and ``difference`` are the mean-difference transform
    ((obs + pred) / 2, obs - pred). Censored rows and rows without a finite
    predicted median are excluded and counted.
    """

    observed: np.ndarray
    predicted: np.ndarray
    mean: np.ndarray
    difference: np.ndarray
    n_censored: int
    n_missing_prediction: int


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float


@dataclass(frozen=True)
class BootstrapCvResult:
    mean_curve: ErrorCurve
    ibs_samples: list
    replicate_indices: list


def default_grid(data: SurvivalDataset, horizon: Optional[float] = None) -> np.ndarray:
    """Distinct event times up to the horizon (default: the 95th percentile
    of observed times, which avoids the unstable censoring tail), with the
    horizon appended as the final grid point."""
    tau = float(np.quantile(data.times, 0.95)) if horizon is None else float(horizon)
    tau = min(tau, float(data.times.max()))
    grid = np.unique(data.times[data.events])
    grid = grid[grid <= tau]
    if grid.size == 0 or grid[-1] < tau:
        grid = np.append(grid, tau)
    return grid


def _censoring_survival(data: SurvivalDataset) -> SurvivalCurve:
    # reverse Kaplan-Meier: events treated as censorings and vice versa
    flipped = SurvivalDataset(
        data.times, ~data.events, np.empty((data.n, 0)), [], data.weights
    )
    return kaplan_meier(flipped)


def brier_curve(predictions: Sequence[SurvivalCurve], data: SurvivalDataset, grid) -> ErrorCurve:
    """Time-dependent Brier score of per-subject survival curves.

    ``grid`` must lie within the observed time range; a leading 0 is added
    if absent so the integral runs from 0. If the censoring survival
    estimate hits 0 inside the grid, the grid is truncated at the last
    positive point with a warning.
    """
    if len(predictions) != data.n:
        raise ValueError("one prediction per observation required")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > data.times.max():
        raise ValueError("grid must lie within the observed time range")
    if grid[0] > 0:
        grid = np.concatenate(([0.0], grid))

    G = _censoring_survival(data)
    g_at_grid = G.values_at(grid)
    positive = g_at_grid > 0
    if not np.all(positive):
        last = int(np.argmin(positive))  # first zero
        warnings.warn(
            "censoring survival reaches 0 inside the grid; truncating at "
            f"t={grid[last - 1]:g}",
            stacklevel=2,
        )
        grid = grid[:last]
        g_at_grid = g_at_grid[:last]

    s_mat = np.vstack([curve.values_at(grid) for curve in predictions])
    g_left = G.left_values_at(data.times)

    t_col = data.times[:, None]
    event_col = data.events[:, None]
    w_col = data.weights[:, None]
    past_event = (t_col <= grid[None, :]) & event_col
    still_alive = t_col > grid[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(past_event, s_mat**2 / g_left[:, None], 0.0)
        contrib += np.where(still_alive, (1.0 - s_mat) ** 2 / g_at_grid[None, :], 0.0)
    bs = (w_col * contrib).sum(axis=0) / data.weights.sum()
    ibs = float(trapezoid(bs, grid) / grid[-1]) if grid[-1] > 0 else 0.0
    return ErrorCurve(times=grid, bs=bs, ibs=ibs)


def km_spec() -> ModelSpec:
    """Covariate-free baseline: the pooled training curve for every subject."""

    def fit(train: SurvivalDataset):
        curve = kaplan_meier(train)
        return lambda X: [curve] * np.asarray(X).shape[0]

    return fit


def cox_spec(config: CoxConfig = CoxConfig()) -> ModelSpec:
    def fit(train: SurvivalDataset):
        model = fit_cox(train, config)
        return lambda X: [predict_cox_survival(model, x) for x in np.asarray(X, dtype=float)]

    return fit


def forest_spec(config: ForestConfig, n_jobs: int = 1) -> ModelSpec:
    def fit(train: SurvivalDataset):
        forest = fit_forest(train, config, n_jobs=n_jobs)

        def predict(X):
            probs = predict_forest_curves(forest, X)
            return [SurvivalCurve(times=forest.grid, probs=row) for row in probs]

        return predict

    return fit


def bootstrap_cv_error(
    model_spec: ModelSpec,
    data: SurvivalDataset,
    n_boot: int,
    grid,
    rng_seed: int = 0,
    n_jobs: int = 1,
    max_retries: int = 10,
) -> BootstrapCvResult:
    """Bootstrap cross-validated prediction error.

    Each replicate draws a bootstrap training multiset (with replacement,
    size n), fits the model, and evaluates the Brier curve on the rows left
    out of the draw; a replicate whose out-of-bootstrap set is empty is
    redrawn (bounded retries). Curves are averaged pointwise in replicate
    order; the per-replicate IBS values are returned for downstream tests.
    Deterministic for a fixed ``rng_seed``.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    grid = np.asarray(grid, dtype=float)
    seeds = np.random.default_rng(rng_seed).integers(0, 2**63 - 1, size=n_boot)

    def one_replicate(r):
        rng = np.random.default_rng(seeds[r])
        for _ in range(max_retries):
            idx = np.sort(rng.integers(0, data.n, size=data.n))
            oob = np.setdiff1d(np.arange(data.n), idx)
            if oob.size > 0:
                break
        else:
            raise ValueError("could not draw a replicate with out-of-bootstrap rows")
        predict = model_spec(data.take(idx))
        test = data.take(oob)
        # the shared grid may extend past this replicate's largest held-out
        # time; clip so every replicate curve is a prefix of the longest one
        sub_grid = grid[grid <= test.times.max()]
        if sub_grid.size == 0:
            raise ValueError(
                "held-out rows all precede the first grid point; use a finer grid"
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            curve = brier_curve(predict(test.X), test, sub_grid)
        return curve, idx

    if n_jobs == 1:
        results = [one_replicate(r) for r in range(n_boot)]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(one_replicate)(r) for r in range(n_boot))

    full_len = max(c.times.size for c, _ in results)
    times = max((c.times for c, _ in results), key=lambda t: t.size)
    stacked = np.full((n_boot, full_len), np.nan)
    for r, (curve, _) in enumerate(results):
        stacked[r, : curve.bs.size] = curve.bs
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mean_bs = np.nanmean(stacked, axis=0)
    covered = ~np.isnan(mean_bs)
    mean_times = times[covered]
    mean_bs = mean_bs[covered]
    mean_ibs = float(trapezoid(mean_bs, mean_times) / mean_times[-1]) if mean_times[-1] > 0 else 0.0
    return BootstrapCvResult(
        mean_curve=ErrorCurve(times=mean_times, bs=mean_bs, ibs=mean_ibs),
        ibs_samples=[c.ibs for c, _ in results],
        replicate_indices=[idx for _, idx in results],
    )


def welch_t_test(a, b) -> WelchResult:
    """Two-sample t-test without the equal-variance assumption.

    t = (mean a - mean b) / sqrt(s_a^2/n_a + s_b^2/n_b), with the
    Welch-Satterthwaite degrees of freedom and a two-sided p-value from the
    Student-t distribution.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0 and vb == 0:
        raise ValueError("zero variance in both samples")
    sa = va / a.size
    sb = vb / b.size
    se = math.sqrt(sa + sb)
    t = float((a.mean() - b.mean()) / se)
    df = (sa + sb) ** 2 / (
        (sa**2 / (a.size - 1) if sa else 0.0) + (sb**2 / (b.size - 1) if sb else 0.0)
    )
    p = float(2.0 * stats.t.sf(abs(t), df))
    return WelchResult(t=t, df=float(df), p_value=p)


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    counting ties as one half (the rank-sum form)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes required")
    ranks = stats.rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def calibration_pairs(predicted_medians, data: SurvivalDataset) -> CalibrationPairs:
    """Observed-vs-predicted median pairs for scatter and mean-difference plots."""
    meds = list(predicted_medians)
    if len(meds) != data.n:
        raise ValueError("one predicted median per observation required")
    obs = []
    pred = []
    n_missing = 0
    for i in range(data.n):
        if not data.events[i]:
            continue
        m = meds[i]
        if m is None or not np.isfinite(m):
            n_missing += 1
            continue
        obs.append(float(data.times[i]))
        pred.append(float(m))
    obs_a = np.asarray(obs)
    pred_a = np.asarray(pred)
    return CalibrationPairs(
        observed=obs_a,
        predicted=pred_a,
        mean=(obs_a + pred_a) / 2.0,
        difference=obs_a - pred_a,
        n_censored=int((~data.events).sum()),
        n_missing_prediction=n_missing,
    )


# ---------------------------------------------------------------------------
# File interfaces


def write_error_curve_csv(curve: ErrorCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "brier_score"])
        for t, b in zip(curve.times, curve.bs):
            w.writerow([repr(float(t)), repr(float(b))])


def write_calibration_csv(pairs: CalibrationPairs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["observed", "predicted", "mean", "difference"])
        for o, p, m, d in zip(pairs.observed, pairs.predicted, pairs.mean, pairs.difference):
            w.writerow([repr(float(o)), repr(float(p)), repr(float(m)), repr(float(d))])
