"""Influence of training samples on a validation fairness violation.

The central approximation: after a small change to the training set, the
change in any smooth validation quantity F(theta) is

    F(theta_new) - F(theta_old)  ~=  -grad_F(theta)^T H^{-1} (sum of changed
                                      training-loss gradients)

where H is the damped training Hessian. Scores are oriented so that a
positive value means the intervention is predicted to *reduce* the fairness
violation (before minus after).

Both scoring entry points route through the single vector
u = H^{-1} grad_fair, so removing a sample gives bit-identical results
whether it is phrased as a singleton weighted-group query or as the
``removal`` concept.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from .counterfactual import (TransportMap, build_transport_map,
                             concept_counterfactuals, parse_concept)
from .data import Dataset
from .fairness import grad_surrogate, hard_violation, surrogate_violation
from .model import (DEFAULT_DAMPING, LogisticModel, grad_samples, hessian,
                    hessian_trace, hvp, logits)

HVP_METHODS = ("direct", "recursive")

DEFAULT_DEPTH = 1000
DEFAULT_BATCH = 64
_DIVERGENCE_FACTOR = 1e6


class NumericalError(RuntimeError):
    """A linear-algebra step failed or an iteration diverged."""


@dataclass(frozen=True)
class InverseHvpConfig:
    """How to apply the inverse damped Hessian to a vector.

    ``direct`` forms the dense Hessian and Cholesky-solves; ``recursive`` runs
    the stochastic Neumann-series recursion
        x <- v + (I - H_batch / scale) x
    with a fresh seeded batch each step, returning x / scale after ``depth``
    steps. ``scale`` must exceed the largest Hessian eigenvalue for the series
    to converge; by default it is set to 1 + trace(H)/(d+1), which is cheap
    and safe for damped logistic Hessians.
    """

    method: str = "direct"
    depth: int = DEFAULT_DEPTH
    batch_size: Optional[int] = None
    scale: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in HVP_METHODS:
            raise ValueError(f"unknown inverse-HVP method {self.method!r}; "
                             f"expected one of {HVP_METHODS}")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")


def inverse_hvp(theta: np.ndarray, X: np.ndarray, y: np.ndarray, v: np.ndarray,
                damping: float, config: InverseHvpConfig = InverseHvpConfig()) -> np.ndarray:
    """Approximate H^{-1} v for the damped training Hessian at theta."""
    if config.method == "direct":
        H = hessian(theta, X, y, damping)
        try:
            factor = scipy.linalg.cho_factor(H)
        except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
            raise NumericalError(
                "Hessian is not positive definite; increase damping") from None
        return scipy.linalg.cho_solve(factor, v)

    n = X.shape[0]
    batch = config.batch_size if config.batch_size is not None else min(n, DEFAULT_BATCH)
    batch = min(batch, n)
    scale = config.scale
    if scale is None:
        scale = 1.0 + hessian_trace(theta, X, damping) / theta.size
    rng = np.random.default_rng(config.seed)
    x = v.copy()
    limit = _DIVERGENCE_FACTOR * max(1.0, float(np.linalg.norm(v)))
    for _ in range(config.depth):
        idx = rng.choice(n, size=batch, replace=False)
        x = v + x - hvp(theta, X[idx], y[idx], x, damping) / scale
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > limit:
            raise NumericalError(
                "inverse-HVP recursion diverged; increase scale (it must exceed "
                "the largest Hessian eigenvalue) or increase damping")
    return x / scale


def fairness_direction(theta: np.ndarray, ds: Dataset, metric: str,
                       damping: float,
                       config: InverseHvpConfig = InverseHvpConfig()) -> np.ndarray:
    """u = H^{-1} grad of the validation surrogate violation.

    Every influence score is a dot product against this one vector; computing
    it once per audit keeps all scoring paths numerically identical.
    """
    tr, val = ds.train_idx, ds.val_idx
    g_fair = grad_surrogate(metric, theta, ds.X[val], ds.y[val], ds.group[val])
    return inverse_hvp(theta, ds.X[tr], ds.y[tr].astype(np.float64), g_fair,
                       damping, config)


def _grad_one(theta: np.ndarray, features: np.ndarray, label: float) -> np.ndarray:
    return grad_samples(theta, features[None, :], np.asarray([label], dtype=np.float64))[0]


def group_influence(ds: Dataset, theta: np.ndarray, metric: str,
                    indices: Sequence[int],
                    weights: Optional[Sequence[float]] = None,
                    damping: float = DEFAULT_DAMPING,
                    config: InverseHvpConfig = InverseHvpConfig(),
                    u: Optional[np.ndarray] = None) -> float:
    """Predicted drop in the surrogate violation if the weighted group of
    training samples were removed (weight 1 = remove outright)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return 0.0
    if weights is None:
        weights = np.ones(indices.size)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != indices.shape:
            raise ValueError("weights length must match indices")
        if ((weights < 0.0) | (weights > 1.0)).any():
            raise ValueError("weights must lie in [0, 1]")
    if u is None:
        u = fairness_direction(theta, ds, metric, damping, config)
    total = np.zeros_like(theta)
    for i, w in zip(indices, weights):
        total = total + w * _grad_one(theta, ds.X[i], float(ds.y[i]))
    return float(-(u @ total))


def concept_influence(ds: Dataset, theta: np.ndarray, metric: str, index: int,
                      concept: str,
                      tmap: Optional[TransportMap] = None,
                      damping: float = DEFAULT_DAMPING,
                      config: InverseHvpConfig = InverseHvpConfig(),
                      u: Optional[np.ndarray] = None) -> float:
    """Predicted drop in the surrogate violation if one training sample were
    replaced by its concept counterfactual(s) (or deleted, for ``removal``)."""
    if u is None:
        u = fairness_direction(theta, ds, metric, damping, config)
    cfs = concept_counterfactuals(ds, index, concept, theta=theta, tmap=tmap)
    own = 1.0 * _grad_one(theta, ds.X[index], float(ds.y[index]))
    score = float(-(u @ own))
    if cfs:
        cf_grads = np.stack([_grad_one(theta, cf.features, float(cf.label))
                             for cf in cfs])
        score = score + float(u @ cf_grads.mean(axis=0))
    return score


@dataclass(frozen=True, eq=False)
class InfluenceReport:
    """Per-sample influence scores for one (metric, concept) audit.

    ``ranking`` lists absolute train indices by descending score; exact ties
    are broken by ascending index so reruns are reproducible.
    """

    metric: str
    concept: str
    train_indices: np.ndarray
    scores: np.ndarray
    ranking: np.ndarray
    hard_violation: float
    surrogate_violation: float
    settings: dict = field(default_factory=dict)

    def top(self, k: int) -> np.ndarray:
        return self.ranking[:k]

    def score_of(self, index: int) -> float:
        pos = np.searchsorted(self.train_indices, index)
        if pos >= self.train_indices.size or self.train_indices[pos] != index:
            raise KeyError(f"sample {index} is not in the audited training set")
        return float(self.scores[pos])

    def to_json(self) -> str:
        payload = {
            "metric": self.metric,
            "concept": self.concept,
            "hard_violation": self.hard_violation,
            "surrogate_violation": self.surrogate_violation,
            "train_indices": [int(v) for v in self.train_indices],
            "scores": [float(v) for v in self.scores],
            "ranking": [int(v) for v in self.ranking],
            "settings": self.settings,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "InfluenceReport":
        payload = json.loads(text)
        return cls(
            metric=payload["metric"],
            concept=payload["concept"],
            train_indices=np.array(payload["train_indices"], dtype=np.int64),
            scores=np.array(payload["scores"], dtype=np.float64),
            ranking=np.array(payload["ranking"], dtype=np.int64),
            hard_violation=payload["hard_violation"],
            surrogate_violation=payload["surrogate_violation"],
            settings=payload.get("settings", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "InfluenceReport":
        return cls.from_json(Path(path).read_text())


def rank_scores(train_indices: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices ordered by descending score, ties by ascending index."""
    order = np.lexsort((train_indices, -scores))
    return train_indices[order]


def audit_influence(ds: Dataset, theta: np.ndarray, metric: str, concept: str,
                    damping: float = DEFAULT_DAMPING,
                    config: InverseHvpConfig = InverseHvpConfig(),
                    k: int = 1, standardize: bool = True,
                    transport_cap: Optional[int] = None,
                    tmap: Optional[TransportMap] = None,
                    threads: int = 1) -> InfluenceReport:
    """Score every training sample for one concept and rank them.

    Per-sample scores are independent dot products against the shared
    direction u and are collected by position, so ``threads`` affects wall
    time only, never the result.
    """
    kind, _ = parse_concept(concept)
    if kind in ("group", "feature") and tmap is None:
        tmap = build_transport_map(ds, concept, k=k, standardize=standardize,
                                   seed=config.seed, cap=transport_cap)
    u = fairness_direction(theta, ds, metric, damping, config)
    train_indices = ds.train_idx

    def score_one(i) -> float:
        return concept_influence(ds, theta, metric, int(i), concept,
                                 tmap=tmap, damping=damping, u=u)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = np.fromiter(pool.map(score_one, train_indices),
                                 dtype=np.float64, count=train_indices.size)
    else:
        scores = np.fromiter(map(score_one, train_indices),
                             dtype=np.float64, count=train_indices.size)
    val = ds.val_idx
    preds = (logits(theta, ds.X[val]) >= 0.0).astype(np.int64)
    report = InfluenceReport(
        metric=metric,
        concept=concept,
        train_indices=train_indices,
        scores=scores,
        ranking=rank_scores(train_indices, scores),
        hard_violation=hard_violation(metric, preds, ds.y[val], ds.group[val]),
        surrogate_violation=surrogate_violation(metric, theta, ds.X[val],
                                                ds.y[val], ds.group[val]),
        settings={
            "damping": damping,
            "hvp": config.method,
            "depth": config.depth,
            "scale": config.scale,
            "seed": config.seed,
            "k": k,
        },
    )
    return report


class InfluenceAuditor(BaseEstimator):
    """End-to-end auditor: train (or accept) a model, score every training
    sample against a fairness concept, and keep the ranked report.

    Fitted attributes: ``model_``, ``transport_map_`` (None for label and
    removal concepts), ``report_``, ``scores_``, ``ranking_``.
    """

    def __init__(self, metric: str = "dp", concept: str = "label",
                 optimizer: str = "sgd", lr: float = 0.01, epochs: int = 200,
                 damping: float = DEFAULT_DAMPING, seed: int = 0,
                 hvp_method: str = "direct", depth: int = DEFAULT_DEPTH,
                 batch_size: Optional[int] = None, scale: Optional[float] = None,
                 k: int = 1, standardize: bool = True,
                 transport_cap: Optional[int] = None, threads: int = 1):
        self.metric = metric
        self.concept = concept
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.damping = damping
        self.seed = seed
        self.hvp_method = hvp_method
        self.depth = depth
        self.batch_size = batch_size
        self.scale = scale
        self.k = k
        self.standardize = standardize
        self.transport_cap = transport_cap
        self.threads = threads

    def fit(self, ds: Dataset, model: Optional[LogisticModel] = None) -> "InfluenceAuditor":
        if ds.split is None:
            raise ValueError("dataset must carry a train/val/test split")
        if model is None:
            model = LogisticModel(optimizer=self.optimizer, lr=self.lr,
                                  epochs=self.epochs, damping=self.damping,
                                  seed=self.seed)
            tr = ds.train_idx
            model.fit(ds.X[tr], ds.y[tr])
        config = InverseHvpConfig(method=self.hvp_method, depth=self.depth,
                                  batch_size=self.batch_size, scale=self.scale,
                                  seed=self.seed)
        kind, _ = parse_concept(self.concept)
        tmap = None
        if kind in ("group", "feature"):
            tmap = build_transport_map(ds, self.concept, k=self.k,
                                       standardize=self.standardize,
                                       seed=self.seed, cap=self.transport_cap)
        report = audit_influence(ds, model.theta_, self.metric, self.concept,
                                 damping=self.damping, config=config, k=self.k,
                                 standardize=self.standardize,
                                 transport_cap=self.transport_cap, tmap=tmap,
                                 threads=self.threads)
        self.model_ = model
        self.transport_map_ = tmap
        self.report_ = report
        self.scores_ = report.scores
        self.ranking_ = report.ranking
        return self
