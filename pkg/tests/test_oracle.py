"""Retraining oracle: measured influence, rank correlation, and CSV I/O."""

import numpy as np
import pytest

from fairtrace.counterfactual import build_transport_map
from fairtrace.data import Dataset
from fairtrace.influence import InfluenceReport, audit_influence, rank_scores
from fairtrace.model import TrainConfig, train_theta
from fairtrace.oracle import (DEFAULT_ORACLE_CONFIG, OracleError, OracleResult,
                              influence_correlation, load_oracle_csv,
                              modified_train_arrays, save_oracle_csv,
                              true_influence, true_influences)
from fairtrace.synthetic import generate

from conftest import random_dataset

NEWTON = TrainConfig(optimizer="newton", damping=0.01)


def mirrored_dataset():
    """Every training point has an exact duplicate in the opposite group.

    Labels follow the sign of the first feature with a wide margin, so the
    fitted model reproduces them; transporting any sample onto its duplicate
    then changes nothing at all.
    """
    train = [
        ((5.0, 0.0), 1, 0), ((5.0, 0.0), 1, 1),
        ((-5.0, 0.0), 0, 0), ((-5.0, 0.0), 0, 1),
        ((4.0, 1.0), 1, 0), ((4.0, 1.0), 1, 1),
        ((-4.0, 1.0), 0, 0), ((-4.0, 1.0), 0, 1),
    ]
    val = [
        ((3.0, 0.0), 1, 0), ((-3.0, 0.0), 0, 0),
        ((3.0, 1.0), 1, 1), ((-3.0, 1.0), 0, 1),
    ]
    rows = train + val
    X = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    group = np.array([r[2] for r in rows])
    split = np.array([0] * len(train) + [1] * len(val))
    return Dataset(X=X, y=y, group=group, feature_names=("f0", "f1"),
                   categorical_mask=np.array([False, False]), split=split)


def report_for(ds, metric="dp", concept="removal", tmap=None):
    theta, _, converged, _ = train_theta(
        ds.X[ds.train_idx], ds.y[ds.train_idx].astype(float), NEWTON)
    assert converged
    return audit_influence(ds, theta, metric, concept, damping=0.01, tmap=tmap)


# -- configuration guards ---------------------------------------------------------------


def test_oracle_requires_newton(small_ds):
    sgd = TrainConfig(optimizer="sgd")
    with pytest.raises(OracleError, match="newton"):
        true_influence(small_ds, "dp", int(small_ds.train_idx[0]), "removal",
                       config=sgd)
    with pytest.raises(OracleError, match="newton"):
        true_influences(small_ds, "dp", "removal", config=sgd)


def test_oracle_requires_convergence(small_ds):
    stuck = TrainConfig(optimizer="newton", newton_max_iter=0)
    with pytest.raises(OracleError, match="did not converge"):
        true_influence(small_ds, "dp", int(small_ds.train_idx[0]), "removal",
                       config=stuck)


def test_default_oracle_config_is_newton():
    assert DEFAULT_ORACLE_CONFIG.optimizer == "newton"


# -- modified training arrays -------------------------------------------------------------


def test_modified_arrays_removal_deletes_the_row(small_ds):
    tr = small_ds.train_idx
    index = int(tr[3])
    theta = np.zeros(small_ds.d + 1)
    X_mod, y_mod = modified_train_arrays(small_ds, index, "removal", theta)
    assert X_mod.shape == (tr.size - 1, small_ds.d)
    keep = tr[tr != index]
    np.testing.assert_array_equal(X_mod, small_ds.X[keep])
    np.testing.assert_array_equal(y_mod, small_ds.y[keep].astype(float))


def test_modified_arrays_label_flips_in_place(small_ds):
    tr = small_ds.train_idx
    index = int(tr[5])
    pos = int(np.flatnonzero(tr == index)[0])
    X_mod, y_mod = modified_train_arrays(small_ds, index, "label",
                                         np.zeros(small_ds.d + 1))
    np.testing.assert_array_equal(X_mod, small_ds.X[tr])
    assert y_mod[pos] == 1.0 - small_ds.y[index]
    others = np.arange(tr.size) != pos
    np.testing.assert_array_equal(y_mod[others],
                                  small_ds.y[tr][others].astype(float))


def test_modified_arrays_reject_non_train_index(small_ds):
    with pytest.raises(OracleError, match="not in the training split"):
        modified_train_arrays(small_ds, int(small_ds.val_idx[0]), "removal",
                              np.zeros(small_ds.d + 1))


def test_modified_arrays_reject_multi_neighbor_maps(small_ds):
    tmap = build_transport_map(small_ds, "group", k=2)
    with pytest.raises(OracleError, match="k=1"):
        modified_train_arrays(small_ds, int(small_ds.train_idx[0]), "group",
                              np.zeros(small_ds.d + 1), tmap=tmap)


# -- exact-zero self-replacement -----------------------------------------------------------


def test_transport_onto_duplicate_changes_nothing():
    ds = mirrored_dataset()
    tmap = build_transport_map(ds, "group", k=1)
    theta, _, converged, _ = train_theta(
        ds.X[ds.train_idx], ds.y[ds.train_idx].astype(float), NEWTON)
    assert converged
    for index in ds.train_idx:
        X_mod, y_mod = modified_train_arrays(ds, int(index), "group", theta,
                                             tmap=tmap)
        assert X_mod.tobytes() == ds.X[ds.train_idx].tobytes()
        assert y_mod.tobytes() == ds.y[ds.train_idx].astype(float).tobytes()
        result = true_influence(ds, "dp", int(index), "group", config=NEWTON,
                                tmap=tmap)
        assert result.true_influence == 0.0
        assert result.fairness_after == result.fairness_before


def test_true_influence_is_deterministic(small_ds):
    index = int(small_ds.train_idx[0])
    a = true_influence(small_ds, "eop", index, "label", config=NEWTON)
    b = true_influence(small_ds, "eop", index, "label", config=NEWTON)
    assert (a.fairness_before, a.fairness_after, a.grad_norm) == (
        b.fairness_before, b.fairness_after, b.grad_norm)
    assert a.index == index and a.concept == "label"
    assert a.grad_norm <= NEWTON.newton_tol


# -- batch oracle -----------------------------------------------------------------------


def test_true_influences_align_with_single_calls(small_ds):
    subset = [int(i) for i in small_ds.train_idx[:5]]
    batch = true_influences(small_ds, "dp", "label", config=NEWTON,
                            indices=subset)
    assert [r.index for r in batch] == subset
    assert len({r.fairness_before for r in batch}) == 1  # base fit shared
    for r in batch:
        single = true_influence(small_ds, "dp", r.index, "label", config=NEWTON)
        assert r.fairness_after == single.fairness_after
        assert r.fairness_before == single.fairness_before


def test_true_influences_thread_invariant(small_ds):
    subset = [int(i) for i in small_ds.train_idx[:6]]
    one = true_influences(small_ds, "dp", "removal", config=NEWTON,
                          indices=subset, threads=1)
    four = true_influences(small_ds, "dp", "removal", config=NEWTON,
                           indices=subset, threads=4)
    assert [(r.index, r.fairness_after) for r in one] == (
        [(r.index, r.fairness_after) for r in four])


def test_true_influences_default_to_whole_training_split(small_ds):
    results = true_influences(small_ds, "dp", "removal", config=NEWTON)
    assert [r.index for r in results] == [int(i) for i in small_ds.train_idx]


# -- rank correlation ----------------------------------------------------------------------


def fake_results(report, transform):
    return [OracleResult(index=int(i), concept=report.concept,
                         fairness_before=1.0,
                         fairness_after=1.0 - transform(report.score_of(int(i))),
                         grad_norm=0.0)
            for i in report.train_indices]


def test_correlation_is_one_for_monotone_transforms(small_ds):
    report = report_for(small_ds)
    for transform in (lambda s: s, lambda s: 3.0 * s + 2.0, np.exp):
        results = fake_results(report, transform)
        assert influence_correlation(report, results) == pytest.approx(1.0)
    inverted = fake_results(report, lambda s: -s)
    assert influence_correlation(report, inverted) == pytest.approx(-1.0)


def test_correlation_input_validation(small_ds):
    report = report_for(small_ds)
    with pytest.raises(ValueError, match="no oracle results"):
        influence_correlation(report, [])
    wrong = [OracleResult(index=int(report.train_indices[0]), concept="label",
                          fairness_before=1.0, fairness_after=0.5, grad_norm=0.0)]
    with pytest.raises(ValueError, match="concept mismatch"):
        influence_correlation(report, wrong)
    lone = fake_results(report, lambda s: s)[:1]
    with pytest.raises(ValueError, match="at least two"):
        influence_correlation(report, lone)


def test_approximation_tracks_retraining_on_benchmark_data():
    # Small end-to-end agreement check; the structured benchmark gives the
    # approximation a clean signal to rank.
    ds, _ = generate(67, seed=3, fractions=(0.6, 0.25, 0.15))
    assert ds.train_idx.size == 40
    report = report_for(ds, metric="dp", concept="removal")
    results = true_influences(ds, "dp", "removal", config=NEWTON, threads=2)
    rho = influence_correlation(report, results)
    assert rho >= 0.8


# -- CSV round trip --------------------------------------------------------------------------


def test_oracle_csv_round_trip(tmp_path, small_ds):
    results = true_influences(small_ds, "dp", "label", config=NEWTON,
                              indices=[int(i) for i in small_ds.train_idx[:4]])
    path = tmp_path / "oracle.csv"
    save_oracle_csv(path, results)
    back = load_oracle_csv(path, concept="label")
    assert len(back) == len(results)
    for orig, loaded in zip(results, back):
        assert loaded.index == orig.index
        assert loaded.fairness_before == orig.fairness_before
        assert loaded.fairness_after == orig.fairness_after
        assert loaded.true_influence == orig.true_influence
        assert loaded.concept == "label"
        assert np.isnan(loaded.grad_norm)


def test_oracle_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "oracle.csv"
    path.write_text("index,before,after,true_influence\n0,1,1,0\n")
    with pytest.raises(ValueError, match="unexpected columns"):
        load_oracle_csv(path)
