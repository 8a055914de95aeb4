"""Censored-data containers, risk sets, and the Kaplan-Meier estimator.

Times are real-valued days since registration (time 0 = registration day).
Tied event and censoring times follow the standard convention: events are
processed first, so subjects censored at t remain in the risk set for the
events at t. All counts are weighted (real arithmetic) so that tree nodes
can reuse the same machinery with bootstrap multiplicities or fractional
weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Observation",
    "SurvivalDataset",
    "SurvivalCurve",
    "RiskTable",
    "build_risk_table",
    "kaplan_meier",
    "median_survival",
    "logrank_scores",
    "load_dataset_csv",
    "write_dataset_csv",
    "read_curve_csv",
    "write_curve_csv",
]


@dataclass(frozen=True)
class Observation:
    """One censored observation: follow-up time, event status, covariates.

    ``event`` is True when the terminal event (churn) was observed and False
    when the subject is right-censored. ``weight`` is a non-negative case
    weight, 1 by default; tree growing uses it for node subsetting.
    """

    time: float
    event: bool
    covariates: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError(f"time must be finite and >= 0, got {self.time}")
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")


class SurvivalDataset:
    """A censored learning sample stored column-wise.

    Rows are (covariate vector, observed time, event indicator, weight).
    Arrays are made read-only on construction; operations on datasets are
    pure functions, safe to evaluate in parallel.
    """

    def __init__(self, times, events, X, feature_names, weights=None):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        feature_names = list(feature_names)
        n = times.shape[0]
        if n == 0:
            raise ValueError("empty dataset")
        if events.shape != (n,):
            raise ValueError("times and events must have equal length")
        if X.shape[0] != n:
            raise ValueError("covariate matrix row count must match times")
        if X.shape[1] != len(feature_names):
            raise ValueError(
                f"feature_names has {len(feature_names)} entries for {X.shape[1]} columns"
            )
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            raise ValueError("times must be finite and >= 0")
        if weights is None:
            weights = np.ones(n)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,):
                raise ValueError("weights must have one entry per observation")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise ValueError("weights must be finite and >= 0")
        for arr in (times, events, X, weights):
            arr.setflags(write=False)
        self.times = times
        self.events = events
        self.X = X
        self.feature_names = feature_names
        self.weights = weights

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                time=float(self.times[i]),
                event=bool(self.events[i]),
                covariates=self.X[i],
                weight=float(self.weights[i]),
            )

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], feature_names) -> "SurvivalDataset":
        obs = list(observations)
        if not obs:
            raise ValueError("empty dataset")
        return cls(
            times=[o.time for o in obs],
            events=[o.event for o in obs],
            X=np.vstack([o.covariates for o in obs]) if obs[0].covariates.size else np.empty((len(obs), 0)),
            feature_names=feature_names,
            weights=[o.weight for o in obs],
        )

    def take(self, indices) -> "SurvivalDataset":
        """Row subset / multiset (repeated indices replicate rows)."""
        idx = np.asarray(indices, dtype=int)
        return SurvivalDataset(
            self.times[idx], self.events[idx], self.X[idx], self.feature_names, self.weights[idx]
        )

    def reweighted(self, weights) -> "SurvivalDataset":
        """Same rows with new case weights (shares the covariate matrix)."""
        return SurvivalDataset(self.times, self.events, self.X, self.feature_names, weights)


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous step function t -> survival probability.

    Stored sparsely at the distinct event times; the implied value before
    the first stored time is 1 (S(0) = 1). Evaluation between steps uses
    the value of the step to the left.
    """

    times: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if times.shape != probs.shape or times.ndim != 1:
            raise ValueError("times and probs must be 1-d arrays of equal length")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValueError("times must be strictly increasing")
            if np.any(probs < 0) or np.any(probs > 1):
                raise ValueError("probs must lie in [0, 1]")
            if np.any(np.diff(probs) > 1e-12):
                raise ValueError("probs must be non-increasing")
        times.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "probs", probs)

    def values_at(self, t) -> np.ndarray:
        """S(t), right-continuous: the step at the largest stored time <= t."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, np.concatenate(([1.0], self.probs))[idx + 1], 1.0)
        return out

    def value_at(self, t: float) -> float:
        return float(self.values_at(np.asarray([t]))[0])

    def left_values_at(self, t) -> np.ndarray:
        """S(t-), the left limit: the step strictly before t."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        return np.where(idx >= 0, np.concatenate(([1.0], self.probs))[idx + 1], 1.0)


@dataclass(frozen=True)
class RiskTable:
    """Weighted risk-set summary at the distinct event times.

    ``n_at_risk[j]`` is the weight of subjects with time >= times[j];
    ``n_events[j]`` the weight of events exactly at times[j].
    """

    times: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray

    def __post_init__(self):
        for name in ("times", "n_at_risk", "n_events"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.times.size:
            if np.any(self.n_at_risk <= 0):
                raise ValueError("risk counts must be positive at listed times")
            if np.any(np.diff(self.n_at_risk) > 1e-12):
                raise ValueError("risk counts must be non-increasing")


def _risk_arrays(times, events, weights):
    """(event_times, n_at_risk, n_events) for weighted data, events first at ties."""
    order = np.argsort(times, kind="stable")
    t = times[order]
    e = events[order]
    w = weights[order]
    # first index of each distinct time
    starts = np.flatnonzero(np.concatenate(([True], t[1:] != t[:-1])))
    # weight at risk just before each distinct time = suffix sum of weights
    suffix = np.concatenate((np.cumsum(w[::-1])[::-1], [0.0]))
    at_risk = suffix[starts]
    d = np.add.reduceat(np.where(e, w, 0.0), starts)
    has_event = d > 0
    return t[starts][has_event], at_risk[has_event], d[has_event]


def build_risk_table(data: SurvivalDataset) -> RiskTable:
    """Tabulate weighted at-risk and event counts at every distinct event time."""
    times, at_risk, d = _risk_arrays(data.times, data.events, data.weights)
    return RiskTable(times=times, n_at_risk=at_risk, n_events=d)


def _km_arrays(times, events, weights):
    t, n, d = _risk_arrays(times, events, weights)
    probs = np.cumprod(1.0 - d / n)
    return t, probs


def kaplan_meier(data: SurvivalDataset) -> SurvivalCurve:
    """Product-limit estimate of the survival function.

    S steps down at each distinct event time t_j by the factor
    (1 - d_j / n_j); with no events the curve is identically 1.
    """
    t, probs = _km_arrays(data.times, data.events, data.weights)
    return SurvivalCurve(times=t, probs=probs)


def median_survival(curve: SurvivalCurve) -> Optional[float]:
    """Smallest stored time with S(t) <= 0.5, or None if S never reaches 0.5."""
    hit = np.flatnonzero(curve.probs <= 0.5)
    if hit.size == 0:
        return None
    return float(curve.times[hit[0]])


def _logrank_score_arrays(times, events, weights):
    t_ev, n, d = _risk_arrays(times, events, weights)
    cumhaz = np.concatenate(([0.0], np.cumsum(d / n)))
    pos = np.searchsorted(t_ev, times, side="right")
    return cumhaz[pos] - events.astype(float)


def logrank_scores(data: SurvivalDataset) -> np.ndarray:
    """Per-observation log-rank scores for rank statistics on censored data.

    The score of observation i is the estimated cumulative hazard at its
    time minus its event indicator. A censored observation scores exactly
    1 more than an event at the same time.
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    return _logrank_score_arrays(data.times, data.events, data.weights)


# ---------------------------------------------------------------------------
# CSV interfaces


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly and is deterministic
    return repr(float(x))


def write_curve_csv(curve: SurvivalCurve, path) -> None:
    """Two-column CSV ``time,survival`` with a leading ``0,1`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "survival"])
        if curve.times.size == 0 or curve.times[0] > 0:
            w.writerow(["0", "1"])
        for t, p in zip(curve.times, curve.probs):
            w.writerow([_fmt(t), _fmt(p)])


def read_curve_csv(path) -> SurvivalCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time", "survival"]:
        raise ValueError(f"schema mismatch: expected 'time,survival' header in {path}")
    times = []
    probs = []
    for t_s, p_s in rows[1:]:
        t, p = float(t_s), float(p_s)
        if not times and t == 0.0 and p == 1.0:
            continue  # implied S(0)=1 row
        times.append(t)
        probs.append(p)
    return SurvivalCurve(times=np.asarray(times), probs=np.asarray(probs))


def write_dataset_csv(data: SurvivalDataset, path) -> None:
    """CSV with header ``time,event,<covariates...>``; event written as 0/1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "event", *data.feature_names])
        for i in range(data.n):
            w.writerow(
                [_fmt(data.times[i]), int(data.events[i]), *(_fmt(v) for v in data.X[i])]
            )


def load_dataset_csv(path, drop: Sequence[str] = ()) -> SurvivalDataset:
    """Read a dataset CSV: columns ``time`` and ``event`` (0/1) are required,
    the remaining columns are covariates in header order. Columns named in
    ``drop`` (e.g. ``player_id``) are ignored.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty dataset") from None
        rows = list(reader)
    if "time" not in header or "event" not in header:
        raise ValueError(f"schema mismatch: 'time' and 'event' columns required in {path}")
    if not rows:
        raise ValueError("empty dataset")
    skip = set(drop) | {"time", "event"}
    feat_cols = [(j, name) for j, name in enumerate(header) if name not in skip]
    t_col = header.index("time")
    e_col = header.index("event")
    times = np.array([float(r[t_col]) for r in rows])
    events = np.array([bool(int(float(r[e_col]))) for r in rows])
    # blank covariate cells (e.g. purchase recency of never-payers) read as NaN
    X = np.array(
        [[float(r[j]) if r[j] != "" else np.nan for j, _ in feat_cols] for r in rows]
    ) if feat_cols else np.empty((len(rows), 0))
    return SurvivalDataset(times, events, X, [name for _, name in feat_cols])
