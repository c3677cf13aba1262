"""Ground-truth influence by actual retraining, for validating the approximation.

The influence approximation predicts how the surrogate violation would change
under a training-set intervention without retraining. This module measures
the real change: apply the intervention to the training set, retrain from
scratch to a tight optimum, and difference the violations. Scores share the
approximation's sign convention (positive = the intervention reduces the
violation).

Retraining uses the deterministic Newton optimizer only; a stochastic
optimizer would fold optimization noise into what is supposed to be ground
truth. Only rank agreement with the approximation is meaningful — the
linearized scores carry an unresolved constant scaling — so comparisons use
Spearman correlation.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.stats

from .counterfactual import TransportMap, concept_counterfactuals, parse_concept
from .data import FLOAT_FORMAT, Dataset
from .fairness import surrogate_violation
from .influence import InfluenceReport
from .model import TrainConfig, train_theta

DEFAULT_ORACLE_CONFIG = TrainConfig(optimizer="newton")


class OracleError(ValueError):
    """The oracle was asked to run in a configuration it cannot vouch for."""


@dataclass(frozen=True)
class OracleResult:
    """Measured effect of one intervention: violation before and after
    retraining, their difference, and the retrain's final gradient norm."""

    index: int
    concept: str
    fairness_before: float
    fairness_after: float
    grad_norm: float

    @property
    def true_influence(self) -> float:
        return self.fairness_before - self.fairness_after


def _check_config(config: TrainConfig) -> None:
    if config.optimizer != "newton":
        raise OracleError(
            "the retraining oracle requires optimizer='newton'; "
            f"got {config.optimizer!r}")


def _retrain(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple:
    theta, _, converged, grad_norm = train_theta(X, y, config)
    if not converged:
        raise OracleError("oracle retraining did not converge; "
                          "raise newton_max_iter or damping")
    return theta, grad_norm


def modified_train_arrays(ds: Dataset, index: int, concept: str,
                          theta: np.ndarray,
                          tmap: Optional[TransportMap] = None) -> tuple:
    """Training arrays after intervening on one sample.

    Removal deletes the row; the other concepts overwrite the row with its
    counterfactual. Only single-counterfactual maps (k=1) are accepted —
    a row cannot hold an average of several discrete samples.
    """
    tr = ds.train_idx
    X = ds.X[tr].copy()
    y = ds.y[tr].astype(np.float64).copy()
    pos = int(np.searchsorted(tr, index))
    if pos >= tr.size or tr[pos] != index:
        raise OracleError(f"sample {index} is not in the training split")
    cfs = concept_counterfactuals(ds, index, concept, theta=theta, tmap=tmap)
    if parse_concept(concept)[0] == "removal":
        return np.delete(X, pos, axis=0), np.delete(y, pos)
    if len(cfs) != 1:
        raise OracleError(
            f"oracle needs exactly one counterfactual per sample, got {len(cfs)}; "
            "build the transport map with k=1")
    X[pos] = cfs[0].features
    y[pos] = float(cfs[0].label)
    return X, y


def true_influence(ds: Dataset, metric: str, index: int, concept: str,
                   config: TrainConfig = DEFAULT_ORACLE_CONFIG,
                   tmap: Optional[TransportMap] = None) -> OracleResult:
    """Retrain on the intervened training set and measure the real change."""
    _check_config(config)
    tr, val = ds.train_idx, ds.val_idx
    theta, _ = _retrain(ds.X[tr], ds.y[tr].astype(np.float64), config)
    before = surrogate_violation(metric, theta, ds.X[val], ds.y[val], ds.group[val])
    X_mod, y_mod = modified_train_arrays(ds, index, concept, theta, tmap)
    theta_after, grad_norm = _retrain(X_mod, y_mod, config)
    after = surrogate_violation(metric, theta_after, ds.X[val], ds.y[val],
                                ds.group[val])
    return OracleResult(index=index, concept=concept, fairness_before=float(before),
                        fairness_after=float(after), grad_norm=grad_norm)


def true_influences(ds: Dataset, metric: str, concept: str,
                    config: TrainConfig = DEFAULT_ORACLE_CONFIG,
                    tmap: Optional[TransportMap] = None,
                    indices: Optional[Sequence[int]] = None,
                    threads: int = 1) -> list:
    """One OracleResult per training sample (or per requested index).

    The base model is fit once; each intervention retrains from scratch on
    its own modified copy of the training arrays. Retrainings are independent
    and may run on a thread pool; results are collected by index, so the
    output is identical for any thread count.
    """
    _check_config(config)
    tr, val = ds.train_idx, ds.val_idx
    theta, _ = _retrain(ds.X[tr], ds.y[tr].astype(np.float64), config)
    before = surrogate_violation(metric, theta, ds.X[val], ds.y[val], ds.group[val])
    if indices is None:
        indices = tr
    indices = np.asarray(indices, dtype=np.int64)

    def one(i: int) -> OracleResult:
        X_mod, y_mod = modified_train_arrays(ds, int(i), concept, theta, tmap)
        theta_after, grad_norm = _retrain(X_mod, y_mod, config)
        after = surrogate_violation(metric, theta_after, ds.X[val], ds.y[val],
                                    ds.group[val])
        return OracleResult(index=int(i), concept=concept,
                            fairness_before=float(before),
                            fairness_after=float(after), grad_norm=grad_norm)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, indices))
    return [one(i) for i in indices]


def influence_correlation(report: InfluenceReport, results: Sequence[OracleResult]) -> float:
    """Spearman rank correlation between approximate and retrained influences.

    Aligns oracle results to the report by sample index; ties get average
    ranks (scipy's convention). The value is invariant under any strictly
    monotone transform of either score vector.
    """
    if not results:
        raise ValueError("no oracle results given")
    concepts = {r.concept for r in results}
    if concepts != {report.concept}:
        raise ValueError(f"concept mismatch: report {report.concept!r} vs {concepts}")
    approx = np.array([report.score_of(r.index) for r in results])
    true = np.array([r.true_influence for r in results])
    if approx.size < 2:
        raise ValueError("need at least two scores for a rank correlation")
    return float(scipy.stats.spearmanr(approx, true).statistic)


_CSV_COLUMNS = ["index", "fairness_before", "fairness_after", "true_influence"]


def save_oracle_csv(path, results: Sequence[OracleResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in results:
            writer.writerow([str(r.index), FLOAT_FORMAT % r.fairness_before,
                             FLOAT_FORMAT % r.fairness_after,
                             FLOAT_FORMAT % r.true_influence])


def load_oracle_csv(path, concept: str = "") -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [OracleResult(index=int(r[0]), concept=concept,
                             fairness_before=float(r[1]), fairness_after=float(r[2]),
                             grad_norm=float("nan"))
                for r in reader]
