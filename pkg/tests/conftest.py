"""Shared desk-scale fixtures.

The synthetic logistic-regression sets are generated from committed seeds so
every expected value derived from them is reproducible; the 10-class image
set is the scikit-learn digits data (first 2000 rows, max-abs scaled), the
offline stand-in for a small MNIST slice.
"""

from __future__ import annotations

import numpy as np
import pytest

from lfopt import Dataset, ModelSpec


def make_synthetic_logreg(n: int, d: int, seed: int, noise: float, scale: float) -> Dataset:
    rng = np.random.default_rng(seed)
    w_star = rng.normal(size=d)
    w_star /= np.linalg.norm(w_star)
    X = rng.normal(size=(n, d)) / np.sqrt(d) * scale
    labels = (X @ w_star + noise * rng.normal(size=n) > 0).astype(int)
    return Dataset.from_dense(X, labels, 2)


@pytest.fixture(scope="session")
def desk_logreg() -> Dataset:
    """n=1000, d=20 convex desk problem."""
    return make_synthetic_logreg(n=1000, d=20, seed=20240301, noise=0.25, scale=1.8)


@pytest.fixture(scope="session")
def desk_logreg_spec() -> ModelSpec:
    return ModelSpec("logreg", 1e-3, 20, 2)


@pytest.fixture(scope="session")
def sim_logreg() -> Dataset:
    """Smaller, flatter problem for the asynchronous-model simulator."""
    return make_synthetic_logreg(n=200, d=10, seed=77, noise=0.3, scale=1.2)


@pytest.fixture(scope="session")
def sim_logreg_spec() -> ModelSpec:
    return ModelSpec("logreg", 1e-3, 10, 2)


@pytest.fixture(scope="session")
def digits_mlp() -> tuple[Dataset, ModelSpec]:
    """First 2000 digits instances (1797 available), max-abs scaled, H=16 MLP."""
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    X, y = sklearn_datasets.load_digits(return_X_y=True)
    X = X[:2000] / 16.0
    y = y[:2000]
    data = Dataset.from_dense(X, y, 10)
    spec = ModelSpec("mlp", 1e-3, data.dim, 10, 16)
    return data, spec
