"""Shared dataset builders and hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st

from survivalkit import SurvivalDataset


def two_cluster_data(n=40, seed=0, with_noise=True, low=10.0, high=100.0, sd=1.0):
    """Uncensored sample split by a binary feature into two survival regimes.

    Rows with feature -1 land near ``low`` days, rows with +1 near ``high``.
    """
    rng = np.random.default_rng(seed)
    half = n // 2
    x0 = np.repeat([-1.0, 1.0], [half, n - half])
    times = np.where(x0 < 0, rng.normal(low, sd, n), rng.normal(high, sd, n)).clip(0.5)
    if with_noise:
        X = np.column_stack([x0, rng.uniform(0, 100, n)])
        names = ["signal", "noise"]
    else:
        X = x0[:, None]
        names = ["signal"]
    return SurvivalDataset(times, np.ones(n, bool), X, names)


def random_censored_data(n=50, seed=0, censor_frac=0.3, n_features=2):
    rng = np.random.default_rng(seed)
    times = rng.exponential(50.0, n) + 0.01
    events = rng.random(n) >= censor_frac
    X = rng.normal(size=(n, n_features))
    return SurvivalDataset(times, events, X, [f"x{j+1}" for j in range(n_features)])


@st.composite
def censored_samples(draw, max_n=30):
    """(times, events) pairs with ties and mixed censoring."""
    n = draw(st.integers(min_value=1, max_value=max_n))
    times = draw(
        st.lists(
            st.floats(min_value=0.0, max_value=500.0, allow_nan=False, allow_infinity=False),
            min_size=n,
            max_size=n,
        )
    )
    # coarsen to create ties
    times = [round(t, 1) for t in times]
    events = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return np.asarray(times), np.asarray(events)


def dataset_from(times, events):
    times = np.asarray(times, dtype=float)
    return SurvivalDataset(times, events, np.zeros((times.size, 1)), ["x"])
