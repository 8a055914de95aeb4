"""Cox proportional-hazards regression fit by penalty-free Newton iterations.

The log partial likelihood uses the Breslow convention for tied event
times (tied events share one risk-set denominator term per event), and the
baseline cumulative hazard is the Breslow step estimate. Covariates are
standardized internally for the solve and the coefficients un-standardized
on output; this is numerically transparent to the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from survivalkit.survival import SurvivalCurve, SurvivalDataset

__all__ = [
    "CoxConfig",
    "CoxModel",
    "cox_log_partial_likelihood",
    "fit_cox",
    "predict_cox_survival",
    "cox_to_dict",
    "cox_from_dict",
]

# |standardized coefficient| beyond this while the likelihood still improves
# indicates monotone likelihood (complete separation)
_DIVERGENCE_BOUND = 50.0


@dataclass(frozen=True)
class CoxConfig:
    tol: float = 1e-6          # gradient max-norm tolerance (standardized scale)
    max_iter: int = 50
    rel_tol: float = 1e-9      # relative log-likelihood change
    max_halvings: int = 20


@dataclass(frozen=True)
class CoxModel:
    """Fitted coefficients plus the Breslow baseline cumulative hazard."""

    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    feature_names: list
    loglik: float
    n_iter: int
    converged: bool

    def __post_init__(self):
        for name in ("beta", "baseline_times", "baseline_cumhaz"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")
        if self.baseline_cumhaz.size and (
            np.any(self.baseline_cumhaz < 0) or np.any(np.diff(self.baseline_cumhaz) < 0)
        ):
            raise ValueError("baseline cumulative hazard must be non-decreasing and >= 0")


class _PartialLikelihood:
    """Risk-set sums for the Breslow partial likelihood, gradient, Hessian.

    Rows are sorted by descending time so that cumulative sums over the
    sorted order equal sums over risk sets {j : T_j >= t}; ties share the
    cumulative sum taken at the end of their time group.
    """

    def __init__(self, times, events, X, weights):
        order = np.argsort(-times, kind="stable")
        self.t = times[order]
        self.e = events[order]
        self.X = X[order]
        self.w = weights[order]
        n = self.t.shape[0]
        # index of the last row of each descending-time group
        boundary = np.concatenate((self.t[1:] != self.t[:-1], [True]))
        group_end = np.flatnonzero(boundary)
        self.risk_end = group_end[np.searchsorted(group_end, np.arange(n))]

    def loglik(self, beta):
        eta = self.X @ beta
        shift = np.max(eta) if eta.size else 0.0
        we = self.w * np.exp(eta - shift)
        s0 = np.cumsum(we)[self.risk_end]
        ev = self.e
        return float(np.sum(self.w[ev] * (eta[ev] - shift - np.log(s0[ev]))))

    def loglik_grad_hess(self, beta):
        eta = self.X @ beta
        shift = np.max(eta)
        we = self.w * np.exp(eta - shift)
        s0 = np.cumsum(we)[self.risk_end]
        s1 = np.cumsum(we[:, None] * self.X, axis=0)[self.risk_end]
        xbar = s1 / s0[:, None]
        ev = self.e
        wev = self.w[ev]
        ll = float(np.sum(wev * (eta[ev] - shift - np.log(s0[ev]))))
        grad = (wev[:, None] * (self.X[ev] - xbar[ev])).sum(axis=0)
        s2 = np.cumsum(we[:, None, None] * (self.X[:, :, None] * self.X[:, None, :]), axis=0)[
            self.risk_end
        ]
        vbar = s2[ev] / s0[ev, None, None] - xbar[ev, :, None] * xbar[ev, None, :]
        hess = -(wev[:, None, None] * vbar).sum(axis=0)
        return ll, grad, hess

    def baseline(self, beta):
        """Breslow cumulative baseline hazard at the distinct event times."""
        eta = self.X @ beta
        shift = np.max(eta) if eta.size else 0.0
        we = self.w * np.exp(eta - shift)
        s0 = np.cumsum(we)[self.risk_end]
        # distinct event times in descending order: last row of each group
        ends = np.unique(self.risk_end)
        d = np.zeros(ends.shape[0])
        np.add.at(d, np.searchsorted(ends, self.risk_end[self.e]), self.w[self.e])
        keep = d > 0
        times_desc = self.t[ends][keep]
        increments = np.exp(np.log(d[keep]) - np.log(s0[ends][keep]) - shift)
        return times_desc[::-1], np.cumsum(increments[::-1])


def cox_log_partial_likelihood(data: SurvivalDataset, beta) -> float:
    """Breslow log partial likelihood at ``beta``.

    Sum over events of beta.x_i - log(sum of exp(beta.x_j) over the risk
    set at T_i); censored-only data gives 0 (empty sum).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.n_features,):
        raise ValueError(
            f"beta has length {beta.shape[0]}, expected {data.n_features}"
        )
    return _PartialLikelihood(data.times, data.events, data.X, data.weights).loglik(beta)


def fit_cox(data: SurvivalDataset, config: CoxConfig = CoxConfig()) -> CoxModel:
    """Maximize the partial likelihood by Newton iterations with step-halving.

    Raises ValueError for event-free data ("no events"), constant or linearly
    dependent covariates ("collinear covariates"), and monotone likelihood
    ("separation / non-identifiable").
    """
    if not np.any(data.events):
        raise ValueError("no events")
    if data.n_features == 0:
        raise ValueError("collinear covariates: no covariates to fit")
    wsum = data.weights.sum()
    if wsum <= 0:
        raise ValueError("no events")
    mu = (data.weights[:, None] * data.X).sum(axis=0) / wsum
    var = (data.weights[:, None] * (data.X - mu) ** 2).sum(axis=0) / wsum
    scale = np.sqrt(var)
    if np.any(scale == 0):
        raise ValueError("collinear covariates")
    Z = (data.X - mu) / scale
    pl = _PartialLikelihood(data.times, data.events, Z, data.weights)

    beta = np.zeros(data.n_features)
    ll, grad, hess = pl.loglik_grad_hess(beta)
    converged = bool(np.max(np.abs(grad)) < config.tol)
    n_iter = 0
    while not converged and n_iter < config.max_iter:
        n_iter += 1
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise ValueError("collinear covariates") from None
        if not np.all(np.isfinite(step)):
            raise ValueError("collinear covariates")
        factor = 1.0
        for _ in range(config.max_halvings + 1):
            cand = beta + factor * step
            cand_ll = pl.loglik(cand)
            if np.isfinite(cand_ll) and cand_ll >= ll:
                break
            factor *= 0.5
        else:
            break  # no uphill step found; keep current beta
        if np.max(np.abs(cand)) > _DIVERGENCE_BOUND:
            raise ValueError("separation / non-identifiable")
        rel_change = abs(cand_ll - ll) / max(1.0, abs(ll))
        beta = cand
        ll, grad, hess = pl.loglik_grad_hess(beta)
        converged = bool(
            np.max(np.abs(grad)) < config.tol and rel_change < config.rel_tol
        )

    beta_out = beta / scale
    full = _PartialLikelihood(data.times, data.events, data.X, data.weights)
    base_times, base_cumhaz = full.baseline(beta_out)
    return CoxModel(
        beta=beta_out,
        baseline_times=base_times,
        baseline_cumhaz=base_cumhaz,
        feature_names=list(data.feature_names),
        loglik=ll,
        n_iter=n_iter,
        converged=converged,
    )


def predict_cox_survival(model: CoxModel, x) -> SurvivalCurve:
    """S(t | x) = exp(-baseline_cumhaz(t) * exp(beta.x)) at the baseline steps."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.beta.shape[0],):
        raise ValueError(
            f"x has length {x.shape[0]}, expected {model.beta.shape[0]}"
        )
    hazard_ratio = math.exp(float(model.beta @ x))
    probs = np.exp(-model.baseline_cumhaz * hazard_ratio)
    return SurvivalCurve(times=model.baseline_times, probs=probs)


def cox_to_dict(model: CoxModel) -> dict:
    return {
        "model": "cox",
        "features": list(model.feature_names),
        "beta": model.beta.tolist(),
        "baseline_times": model.baseline_times.tolist(),
        "baseline_cumhaz": model.baseline_cumhaz.tolist(),
        "loglik": model.loglik,
        "converged": model.converged,
        "n_iter": model.n_iter,
    }


def cox_from_dict(doc: dict) -> CoxModel:
    return CoxModel(
        beta=np.asarray(doc["beta"], dtype=float),
        baseline_times=np.asarray(doc["baseline_times"], dtype=float),
        baseline_cumhaz=np.asarray(doc["baseline_cumhaz"], dtype=float),
        feature_names=list(doc["features"]),
        loglik=float(doc["loglik"]),
        n_iter=int(doc["n_iter"]),
        converged=bool(doc["converged"]),
    )


def save_cox(model: CoxModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(cox_to_dict(model), fh, indent=2)


def load_cox(path) -> CoxModel:
    with open(path) as fh:
        return cox_from_dict(json.load(fh))
