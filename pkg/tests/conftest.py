"""Shared construction helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fairtrace.data import Dataset

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


def random_dataset(n: int = 40, d: int = 4, seed: int = 0,
                   categorical_last: bool = False) -> Dataset:
    """A random split dataset with every (group, label) cell populated in all
    three splits, so any metric is defined and transport always has targets."""
    if n < 20:
        raise ValueError("need n >= 20 to populate every split cell")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = rng.integers(0, 2, size=n)
    group = rng.integers(0, 2, size=n)
    if categorical_last:
        X[:, -1] = rng.integers(0, 2, size=n).astype(np.float64)

    perm = rng.permutation(n)
    n_tr = max(int(0.6 * n), 8)
    n_val = max(int(0.2 * n), 4)
    split = np.empty(n, dtype=np.int64)
    split[perm[:n_tr]] = 0
    split[perm[n_tr:n_tr + n_val]] = 1
    split[perm[n_tr + n_val:]] = 2

    # Pin one sample of each (group, label) cell into each split.
    for block in (perm[:n_tr], perm[n_tr:n_tr + n_val], perm[n_tr + n_val:]):
        for (a, lab), i in zip(CELLS, block):
            group[i] = a
            y[i] = lab

    names = tuple(f"f{j}" for j in range(d))
    mask = np.zeros(d, dtype=bool)
    if categorical_last:
        mask[-1] = True
    return Dataset(X=X, y=y, group=group, feature_names=names,
                   categorical_mask=mask, split=split)


def random_theta(d: int, seed: int = 0, scale: float = 0.5) -> np.ndarray:
    return scale * np.random.default_rng(seed).standard_normal(d + 1)


@pytest.fixture
def small_ds() -> Dataset:
    return random_dataset(n=40, d=4, seed=11)


@pytest.fixture
def cat_ds() -> Dataset:
    return random_dataset(n=48, d=4, seed=5, categorical_last=True)
