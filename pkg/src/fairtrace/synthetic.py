"""Synthetic benchmark with known causal structure and exact counterfactuals.

Samples are drawn from a fixed causal graph over five features:

    x1 ~ N(0, 1)
    a  ~ Bernoulli(0.3)            (sensitive attribute; also a feature)
    x2 = a + eps2,   eps2 ~ N(0, 3^2)
    z1 ~ N(0, 1)                   (latent; never a feature)
    x3 = 2*z1 - 1 + eps3,  eps3 ~ N(0, 0.1^2)
    x4 ~ Bernoulli(0.1)
    y  = 1 if 5*x1*a + 0.2*x2^3 + 0.5*a + 0.3*x4 - x3 >= 0 else 0

Because the exogenous noise of every sample is kept in a sidecar
(:class:`Latents`), the *true* effect of intervening on ``a`` is computable:
re-propagate the same noise through the graph with ``a`` forced. This gives
an exact reference against which nearest-neighbor transport is judged.

Determinism: one generator seeded with the run seed draws, in order, a, x4,
x1, eps2, z1, eps3 as whole blocks (the two Bernoulli blocks first); the
train/val/test split reuses the same seed. Identical (n, seed) therefore
reproduce the dataset byte for byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DEFAULT_FRACTIONS, FLOAT_FORMAT, Dataset, split_dataset

FEATURE_NAMES = ("x1", "x2", "x3", "x4", "a")
CATEGORICAL = np.array([False, False, False, True, True])

_P_A = 0.3
_P_X4 = 0.1
_X2_STD = 3.0
_X3_STD = 0.1


@dataclass(frozen=True, eq=False)
class Latents:
    """Exogenous noise behind each sample, enough to replay the causal graph."""

    x1: np.ndarray
    a: np.ndarray
    x2_noise: np.ndarray
    z1: np.ndarray
    x3_noise: np.ndarray
    x4: np.ndarray

    @property
    def n(self) -> int:
        return self.x1.size


def _label(x1, x2, x3, x4, a) -> np.ndarray:
    score = 5.0 * x1 * a + 0.2 * x2 ** 3 + 0.5 * a + 0.3 * x4 - x3
    return (score >= 0.0).astype(np.int64)  # sign(0) counts as positive


def _assemble(lat: Latents, a: np.ndarray) -> tuple:
    """Propagate exogenous noise through the graph for a given attribute."""
    x2 = a + lat.x2_noise
    x3 = 2.0 * lat.z1 - 1.0 + lat.x3_noise
    y = _label(lat.x1, x2, x3, lat.x4, a)
    X = np.column_stack([lat.x1, x2, x3, lat.x4.astype(np.float64),
                         a.astype(np.float64)])
    return X, y


def generate(n: int, seed: int = 0,
             fractions: Sequence[float] = DEFAULT_FRACTIONS) -> tuple:
    """Draw a dataset of size n; returns (split Dataset, Latents sidecar)."""
    if n < 10:
        raise ValueError("n must be at least 10")
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < _P_A).astype(np.int64)
    x4 = (rng.random(n) < _P_X4).astype(np.int64)
    x1 = rng.standard_normal(n)
    x2_noise = _X2_STD * rng.standard_normal(n)
    z1 = rng.standard_normal(n)
    x3_noise = _X3_STD * rng.standard_normal(n)
    lat = Latents(x1=x1, a=a, x2_noise=x2_noise, z1=z1, x3_noise=x3_noise, x4=x4)
    X, y = _assemble(lat, a)
    ds = Dataset(X=X, y=y, group=a, feature_names=FEATURE_NAMES,
                 categorical_mask=CATEGORICAL)
    return split_dataset(ds, fractions, seed=seed), lat


def true_counterfactual(lat: Latents, index: int, target_a: int) -> tuple:
    """Exact counterfactual of one sample with the attribute forced to target_a.

    x1, x4, and x3 keep their factual values (x3 does not depend on a); x2 and
    y are re-derived from the stored noise. Forcing the factual value returns
    the factual sample bit for bit.
    """
    one = np.array([target_a], dtype=np.int64)
    sub = Latents(x1=lat.x1[index:index + 1], a=one,
                  x2_noise=lat.x2_noise[index:index + 1],
                  z1=lat.z1[index:index + 1],
                  x3_noise=lat.x3_noise[index:index + 1],
                  x4=lat.x4[index:index + 1])
    X, y = _assemble(sub, one)
    return X[0], int(y[0])


def true_counterfactuals(lat: Latents, indices: Sequence[int],
                         target_a: Sequence[int]) -> tuple:
    """Vectorized :func:`true_counterfactual` over many samples."""
    idx = np.asarray(indices, dtype=np.int64)
    target = np.asarray(target_a, dtype=np.int64)
    sub = Latents(x1=lat.x1[idx], a=target, x2_noise=lat.x2_noise[idx],
                  z1=lat.z1[idx], x3_noise=lat.x3_noise[idx], x4=lat.x4[idx])
    return _assemble(sub, target)


_LATENT_COLUMNS = ("x1", "a", "x2_noise", "z1", "x3_noise", "x4")


def save_latents(lat: Latents, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LATENT_COLUMNS)
        for i in range(lat.n):
            writer.writerow([
                FLOAT_FORMAT % lat.x1[i], str(int(lat.a[i])),
                FLOAT_FORMAT % lat.x2_noise[i], FLOAT_FORMAT % lat.z1[i],
                FLOAT_FORMAT % lat.x3_noise[i], str(int(lat.x4[i])),
            ])


def load_latents(path) -> Latents:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != _LATENT_COLUMNS:
            raise ValueError(f"{path}: unexpected latent columns {header}")
        rows = list(reader)
    cols = {name: np.array([row[j] for row in rows], dtype=np.float64)
            for j, name in enumerate(_LATENT_COLUMNS)}
    return Latents(x1=cols["x1"], a=cols["a"].astype(np.int64),
                   x2_noise=cols["x2_noise"], z1=cols["z1"],
                   x3_noise=cols["x3_noise"], x4=cols["x4"].astype(np.int64))
