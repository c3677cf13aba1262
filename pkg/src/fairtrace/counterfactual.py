"""Counterfactual versions of training samples under concept interventions.

Four interventions are supported for a training sample:

- ``label``          flip the binary label (an involution; features untouched).
- ``group``          flip the sensitive attribute by transporting the sample
                     onto real samples of the other group.
- ``feature:<name>`` flip a binary categorical feature the same way.
- ``removal``        delete the sample (no counterfactual payload).

Transport follows a nearest-neighbor protocol: the counterfactual for a
sample is its nearest real neighbor(s) in the target cell, measured by squared
Euclidean distance on (by default) standardized features. Using real samples
keeps counterfactuals on the data manifold. The counterfactual label is the
model's own hard prediction on the transported features, since the true
outcome under intervention is unobserved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .model import logits

CONCEPT_KINDS = ("label", "group", "feature", "removal")


class ConceptError(ValueError):
    """The concept string is malformed or names an ineligible feature."""


class TransportError(RuntimeError):
    """Nearest-neighbor transport cannot be carried out (empty target cell, ...)."""


def parse_concept(text: str) -> tuple:
    """Split a concept string into (kind, argument)."""
    if text in ("label", "group", "removal"):
        return text, None
    if text.startswith("feature:"):
        name = text[len("feature:"):]
        if not name:
            raise ConceptError("feature concept needs a name: 'feature:<name>'")
        return "feature", name
    raise ConceptError(
        f"unknown concept {text!r}; expected label, group, feature:<name>, or removal")


@dataclass(frozen=True)
class CounterfactualSample:
    """A concrete intervened version of one training sample.

    ``features`` is None exactly when the intervention is removal.
    ``neighbor_index`` records which real sample a transported counterfactual
    was copied from (None for label flips and removals).
    """

    source_index: int
    concept: str
    features: Optional[np.ndarray]
    label: Optional[int]
    group: Optional[int]
    neighbor_index: Optional[int] = None


@dataclass(frozen=True, eq=False)
class TransportMap:
    """Precomputed nearest neighbors for every source sample of a concept.

    ``source_idx`` and ``neighbor_idx`` hold absolute dataset indices;
    ``neighbor_idx[i]`` lists the k nearest target-cell samples for
    ``source_idx[i]``, nearest first, ties broken by smallest index.
    """

    concept: str
    source_idx: np.ndarray
    neighbor_idx: np.ndarray
    k: int
    standardize: bool
    seed: int
    cap: Optional[int]

    def neighbors(self, index: int) -> np.ndarray:
        pos = np.searchsorted(self.source_idx, index)
        if pos >= self.source_idx.size or self.source_idx[pos] != index:
            raise TransportError(f"sample {index} is not a source of this transport map")
        return self.neighbor_idx[pos]

    def to_json(self) -> str:
        payload = {
            "concept": self.concept,
            "k": self.k,
            "standardize": self.standardize,
            "seed": self.seed,
            "cap": self.cap,
            "source_idx": [int(v) for v in self.source_idx],
            "neighbor_idx": [[int(v) for v in row] for row in self.neighbor_idx],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TransportMap":
        payload = json.loads(text)
        return cls(
            concept=payload["concept"],
            source_idx=np.array(payload["source_idx"], dtype=np.int64),
            neighbor_idx=np.array(payload["neighbor_idx"], dtype=np.int64),
            k=payload["k"],
            standardize=payload["standardize"],
            seed=payload["seed"],
            cap=payload["cap"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "TransportMap":
        return cls.from_json(Path(path).read_text())


def _feature_column(ds: Dataset, name: str) -> int:
    if name not in ds.feature_names:
        raise ConceptError(f"unknown feature {name!r}")
    j = ds.feature_names.index(name)
    if not ds.categorical_mask[j]:
        raise ConceptError(f"feature {name!r} is not categorical; cannot flip it")
    if not np.isin(ds.X[:, j], (0.0, 1.0)).all():
        raise ConceptError(f"feature {name!r} has values outside {{0,1}}; cannot flip it")
    return j


def build_transport_map(
    ds: Dataset,
    concept: str,
    k: int = 1,
    standardize: bool = True,
    seed: int = 0,
    cap: Optional[int] = None,
) -> TransportMap:
    """Find, for every training sample, its k nearest real opposite-cell samples.

    The search pool is the training split (the whole dataset when no split is
    assigned). ``cap``, when set, restricts each target cell to a seeded random
    subsample of that size before searching, trading fidelity for speed.
    """
    kind, arg = parse_concept(concept)
    if kind not in ("group", "feature"):
        raise ConceptError(f"concept {concept!r} does not use transport")
    if k < 1:
        raise ConceptError("k must be at least 1")
    pool = ds.train_idx if ds.split is not None else np.arange(ds.n)
    X_pool = ds.X[pool]
    if kind == "group":
        cell_of = ds.group[pool]
        canonical = "group"
    else:
        j = _feature_column(ds, arg)
        cell_of = ds.X[pool, j].astype(np.int64)
        canonical = f"feature:{arg}"

    if standardize:
        mu = X_pool.mean(axis=0)
        sd = X_pool.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        Z = (X_pool - mu) / sd
    else:
        Z = X_pool

    rng = np.random.default_rng(seed)
    members = {}
    for value in (0, 1):
        cell = np.flatnonzero(cell_of == value)
        if cap is not None and cap < cell.size:
            cell = np.sort(rng.choice(cell, size=cap, replace=False))
        members[value] = cell

    neighbor_rows = np.empty((pool.size, k), dtype=np.int64)
    for p in range(pool.size):
        target = 1 - int(cell_of[p])
        cand = members[target]
        if cand.size < k:
            raise TransportError(
                f"target cell {canonical}={target} has {cand.size} candidate(s); "
                f"need at least k={k}")
        dist = ((Z[cand] - Z[p]) ** 2).sum(axis=1)
        order = np.argsort(dist, kind="stable")  # equal distances: smallest index wins
        neighbor_rows[p] = pool[cand[order[:k]]]

    return TransportMap(concept=canonical, source_idx=pool.copy(),
                        neighbor_idx=neighbor_rows, k=k,
                        standardize=standardize, seed=seed, cap=cap)


def flip_label(ds: Dataset, index: int) -> CounterfactualSample:
    """Label intervention: same features and group, opposite label."""
    return CounterfactualSample(
        source_index=index, concept="label", features=ds.X[index].copy(),
        label=1 - int(ds.y[index]), group=int(ds.group[index]))


def remove_sample(ds: Dataset, index: int) -> CounterfactualSample:
    """Removal intervention: the sample simply ceases to exist."""
    return CounterfactualSample(source_index=index, concept="removal",
                                features=None, label=None, group=None)


def transported_samples(ds: Dataset, index: int, tmap: TransportMap,
                        theta: np.ndarray) -> list:
    """Counterfactuals of one sample under a transport map (group or feature flip).

    Returns one CounterfactualSample per neighbor; downstream scoring averages
    over them. The label is the model's hard prediction at the transported
    features (ties at the boundary predict 1); the group is flipped for a
    group concept and kept for a feature concept.
    """
    kind, _ = parse_concept(tmap.concept)
    out = []
    for m in tmap.neighbors(index):
        features = ds.X[m].copy()
        label = int(logits(theta, features[None, :])[0] >= 0.0)
        group = 1 - int(ds.group[index]) if kind == "group" else int(ds.group[index])
        out.append(CounterfactualSample(source_index=index, concept=tmap.concept,
                                        features=features, label=label, group=group,
                                        neighbor_index=int(m)))
    return out


def concept_counterfactuals(ds: Dataset, index: int, concept: str,
                            theta: Optional[np.ndarray] = None,
                            tmap: Optional[TransportMap] = None) -> list:
    """All counterfactual versions of one sample for a concept.

    Removal yields an empty list by design: the removed sample contributes no
    replacement term to downstream scores.
    """
    kind, _ = parse_concept(concept)
    if kind == "label":
        return [flip_label(ds, index)]
    if kind == "removal":
        return []
    if tmap is None or theta is None:
        raise ConceptError(f"concept {concept!r} requires a transport map and model parameters")
    if parse_concept(tmap.concept) != parse_concept(concept):
        raise ConceptError(
            f"transport map was built for {tmap.concept!r}, not {concept!r}")
    return transported_samples(ds, index, tmap, theta)
