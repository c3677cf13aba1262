"""End-to-end uses of influence scores: repair, stress-test, and detect.

Three seeded injectors corrupt the *training split only* (validation and test
stay clean so measurements remain trustworthy):

- label noise with group-and-label dependent flip probabilities,
- poisoning (label flip plus a fixed categorical backdoor value),
- cell imbalance (duplicating one (group, label) cell with replacement).

On top of the injectors sit two consumers of influence rankings: ``mitigate``
edits the top-ranked samples and retrains; ``detect`` flags the top-ranked
samples and scores them against the known corrupted set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .counterfactual import (build_transport_map, concept_counterfactuals,
                             parse_concept)
from .data import Dataset
from .fairness import hard_violation, surrogate_violation
from .influence import InfluenceReport, InverseHvpConfig, audit_influence
from .model import TrainConfig, logits, train_theta

# Flip probability per (group, label) training cell. The default skews noise
# against the (group=1, label=1) cell, which reliably manufactures an unfair
# training set from a fair one.
DEFAULT_NOISE_TABLE = {
    (0, 0): 0.45,
    (1, 0): 0.35,
    (0, 1): 0.15,
    (1, 1): 0.55,
}


def _check_table(probs: Mapping) -> dict:
    table = {}
    for key, p in probs.items():
        a, yv = key
        if (a, yv) not in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            raise ValueError(f"bad noise cell {key!r}")
        if not 0.0 <= float(p) <= 1.0:
            raise ValueError(f"noise probability for cell {key!r} out of [0,1]: {p}")
        table[(int(a), int(yv))] = float(p)
    return table


@dataclass(frozen=True)
class NoiseSpec:
    """Group-dependent label noise on the training split."""

    probs: Mapping = field(default_factory=lambda: dict(DEFAULT_NOISE_TABLE))
    seed: int = 0


@dataclass(frozen=True)
class PoisonSpec:
    """Label flip plus a categorical backdoor trigger on selected samples."""

    probs: Mapping = field(default_factory=lambda: dict(DEFAULT_NOISE_TABLE))
    feature: str = "x4"
    value: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ImbalanceSpec:
    """Duplicate one (group, label) training cell by a multiplicative factor."""

    group: int = 1
    label: int = 1
    factor: float = 2.0
    seed: int = 0


def _select_by_cell(ds: Dataset, probs: Mapping, seed: int) -> np.ndarray:
    """Seeded per-sample selection: train sample i is picked with the
    probability of its (group, label) cell. Returns absolute indices."""
    table = _check_table(probs)
    tr = ds.train_idx
    rng = np.random.default_rng(seed)
    u = rng.random(tr.size)
    p = np.array([table.get((int(ds.group[i]), int(ds.y[i])), 0.0) for i in tr])
    return tr[u < p]


def inject_label_noise(ds: Dataset, spec: NoiseSpec = NoiseSpec()) -> tuple:
    """Flip selected training labels; returns (corrupted dataset, true indices)."""
    picked = _select_by_cell(ds, spec.probs, spec.seed)
    corrupted = ds.replace_rows(picked, y=1 - ds.y[picked])
    return corrupted, picked


def inject_poison(ds: Dataset, spec: PoisonSpec = PoisonSpec()) -> tuple:
    """Flip labels and stamp a fixed categorical value on selected samples."""
    if spec.feature not in ds.feature_names:
        raise ValueError(f"unknown feature {spec.feature!r}")
    j = ds.feature_names.index(spec.feature)
    if not ds.categorical_mask[j]:
        raise ValueError(f"poison target {spec.feature!r} must be categorical")
    picked = _select_by_cell(ds, spec.probs, spec.seed)
    X_rows = ds.X[picked].copy()
    X_rows[:, j] = spec.value
    corrupted = ds.replace_rows(picked, X=X_rows, y=1 - ds.y[picked])
    return corrupted, picked


def inject_imbalance(ds: Dataset, spec: ImbalanceSpec = ImbalanceSpec()) -> tuple:
    """Append floor(factor * cell size) seeded duplicates of one training cell.

    Returns (bigger dataset, indices of the appended rows).
    """
    if spec.factor <= 0:
        raise ValueError("factor must be positive")
    tr = ds.train_idx
    cell = tr[(ds.group[tr] == spec.group) & (ds.y[tr] == spec.label)]
    if cell.size == 0:
        raise ValueError(f"training cell group={spec.group}, label={spec.label} is empty")
    count = math.floor(spec.factor * cell.size)
    rng = np.random.default_rng(spec.seed)
    chosen = cell[rng.integers(0, cell.size, size=count)]
    bigger = ds.append_rows(ds.X[chosen], ds.y[chosen], ds.group[chosen], split_code=0)
    appended = np.arange(ds.n, ds.n + count, dtype=np.int64)
    return bigger, appended


def save_truth(path, kind: str, indices: np.ndarray) -> None:
    payload = {"kind": kind, "indices": [int(v) for v in indices]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_truth(path) -> tuple:
    payload = json.loads(Path(path).read_text())
    return payload["kind"], np.array(payload["indices"], dtype=np.int64)


# -- mitigation --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MitigationReport:
    """Before/after measurements of a single repair round."""

    metric: str
    concept: str
    k_edit: int
    edited_indices: np.ndarray
    hard_before: float
    hard_after: float
    surrogate_before: float
    surrogate_after: float
    accuracy_before: float
    accuracy_after: float

    def to_json(self) -> str:
        payload = {
            "metric": self.metric, "concept": self.concept, "k_edit": self.k_edit,
            "edited_indices": [int(v) for v in self.edited_indices],
            "hard_before": self.hard_before, "hard_after": self.hard_after,
            "surrogate_before": self.surrogate_before,
            "surrogate_after": self.surrogate_after,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MitigationReport":
        p = json.loads(text)
        return cls(metric=p["metric"], concept=p["concept"], k_edit=p["k_edit"],
                   edited_indices=np.array(p["edited_indices"], dtype=np.int64),
                   hard_before=p["hard_before"], hard_after=p["hard_after"],
                   surrogate_before=p["surrogate_before"],
                   surrogate_after=p["surrogate_after"],
                   accuracy_before=p["accuracy_before"],
                   accuracy_after=p["accuracy_after"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "MitigationReport":
        return cls.from_json(Path(path).read_text())


def apply_edits(ds: Dataset, indices: Sequence[int], concept: str,
                theta: np.ndarray, tmap=None) -> Dataset:
    """Apply one concept intervention to the given training rows.

    Transported concepts use each sample's nearest counterfactual. All
    counterfactuals are generated at the *pre-repair* parameters ``theta``.
    """
    kind, _ = parse_concept(concept)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return ds
    if kind == "label":
        return ds.replace_rows(indices, y=1 - ds.y[indices])
    if kind == "removal":
        return ds.drop_rows(indices)
    X_rows, y_rows, g_rows = [], [], []
    for i in indices:
        cf = concept_counterfactuals(ds, int(i), concept, theta=theta, tmap=tmap)[0]
        X_rows.append(cf.features)
        y_rows.append(cf.label)
        g_rows.append(cf.group)
    return ds.replace_rows(indices, X=np.stack(X_rows),
                           y=np.array(y_rows), group=np.array(g_rows))


def _evaluate(theta: np.ndarray, ds: Dataset, metric: str) -> tuple:
    """(hard violation on val, surrogate violation on val, accuracy on test)."""
    val, te = ds.val_idx, ds.test_idx
    preds_val = (logits(theta, ds.X[val]) >= 0.0).astype(np.int64)
    hard = hard_violation(metric, preds_val, ds.y[val], ds.group[val])
    surr = surrogate_violation(metric, theta, ds.X[val], ds.y[val], ds.group[val])
    preds_te = (logits(theta, ds.X[te]) >= 0.0).astype(np.int64)
    acc = float((preds_te == ds.y[te]).mean())
    return hard, surr, acc


def mitigate(ds: Dataset, metric: str, concept: str, k_edit: int,
             train_config: TrainConfig = TrainConfig(),
             hvp_config: InverseHvpConfig = InverseHvpConfig(),
             nn_k: int = 1, standardize: bool = True,
             transport_cap: Optional[int] = None, threads: int = 1) -> tuple:
    """One audit-edit-retrain round.

    Ranks all training samples by concept influence, applies the intervention
    to the top ``k_edit``, retrains with the same configuration, and reports
    violation and accuracy before/after. Returns (report, repaired dataset,
    influence report).
    """
    tr = ds.train_idx
    if not 0 <= k_edit <= tr.size:
        raise ValueError(f"k_edit must be in [0, {tr.size}], got {k_edit}")
    theta, _, _, _ = train_theta(ds.X[tr], ds.y[tr].astype(np.float64), train_config)
    kind, _ = parse_concept(concept)
    tmap = None
    if kind in ("group", "feature"):
        tmap = build_transport_map(ds, concept, k=nn_k, standardize=standardize,
                                   seed=hvp_config.seed, cap=transport_cap)
    report = audit_influence(ds, theta, metric, concept,
                             damping=train_config.damping, config=hvp_config,
                             k=nn_k, tmap=tmap, threads=threads)
    edited = report.ranking[:k_edit]
    repaired = apply_edits(ds, edited, concept, theta, tmap=tmap)
    tr2 = repaired.train_idx
    theta_after, _, _, _ = train_theta(repaired.X[tr2],
                                       repaired.y[tr2].astype(np.float64), train_config)
    hard_b, surr_b, acc_b = _evaluate(theta, ds, metric)
    hard_a, surr_a, acc_a = _evaluate(theta_after, repaired, metric)
    mreport = MitigationReport(metric=metric, concept=concept, k_edit=k_edit,
                               edited_indices=edited,
                               hard_before=hard_b, hard_after=hard_a,
                               surrogate_before=surr_b, surrogate_after=surr_a,
                               accuracy_before=acc_b, accuracy_after=acc_a)
    return mreport, repaired, report


# -- detection ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Top-ranked flags scored against a known corrupted set."""

    metric: str
    concept: str
    flag_fraction: float
    flagged: np.ndarray
    precision: Optional[float]
    random_baseline: Optional[float]

    def to_json(self) -> str:
        payload = {
            "metric": self.metric, "concept": self.concept,
            "flag_fraction": self.flag_fraction,
            "flagged": [int(v) for v in self.flagged],
            "precision": self.precision,
            "random_baseline": self.random_baseline,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DetectionReport":
        p = json.loads(text)
        return cls(metric=p["metric"], concept=p["concept"],
                   flag_fraction=p["flag_fraction"],
                   flagged=np.array(p["flagged"], dtype=np.int64),
                   precision=p["precision"], random_baseline=p["random_baseline"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DetectionReport":
        return cls.from_json(Path(path).read_text())


def detect(report: InfluenceReport, flag_fraction: float,
           truth: Optional[Sequence[int]] = None) -> DetectionReport:
    """Flag the ceil(fraction * n_train) highest-scoring samples.

    A corrupted sample's intervention tends to *reduce* the violation, so
    corruption concentrates at the top of the ranking. Precision is reported
    against ``truth`` when given, along with the expected precision of
    uniformly random flagging (the corrupted fraction itself).
    """
    if not 0.0 < flag_fraction <= 1.0:
        raise ValueError("flag_fraction must be in (0, 1]")
    n = report.train_indices.size
    count = math.ceil(flag_fraction * n)
    flagged = report.ranking[:count]
    precision = baseline = None
    if truth is not None:
        truth_arr = np.asarray(truth, dtype=np.int64)
        in_train = np.intersect1d(truth_arr, report.train_indices)
        hits = np.intersect1d(flagged, in_train).size
        precision = hits / count
        baseline = in_train.size / n
    return DetectionReport(metric=report.metric, concept=report.concept,
                           flag_fraction=flag_fraction, flagged=flagged,
                           precision=precision, random_baseline=baseline)


def run_detection(ds: Dataset, truth: Sequence[int], metric: str, concept: str,
                  flag_fraction: float,
                  train_config: TrainConfig = TrainConfig(),
                  hvp_config: InverseHvpConfig = InverseHvpConfig(),
                  nn_k: int = 1, standardize: bool = True,
                  transport_cap: Optional[int] = None, threads: int = 1) -> tuple:
    """Train, audit, and flag in one step against a known corrupted set.

    Returns (detection report, influence report).
    """
    tr = ds.train_idx
    theta, _, _, _ = train_theta(ds.X[tr], ds.y[tr].astype(np.float64), train_config)
    report = audit_influence(ds, theta, metric, concept,
                             damping=train_config.damping, config=hvp_config,
                             k=nn_k, standardize=standardize,
                             transport_cap=transport_cap, threads=threads)
    return detect(report, flag_fraction, truth=truth), report
