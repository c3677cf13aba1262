"""Tabular dataset container, train/val/test splitting, and CSV + schema I/O.

Every other module consumes the :class:`Dataset` defined here: a fixed-width
float64 feature matrix with a binary label, a binary sensitive-group column,
and an optional per-sample concept tag. Datasets are immutable after
construction; all "mutating" helpers return new instances.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)

# 17 significant digits: lossless text round trip for IEEE float64.
FLOAT_FORMAT = "%.17g"

_ROLES = {"feature", "label", "group", "concept", "ignore"}
_FEATURE_QUALIFIERS = {"categorical", "numeric"}


class SchemaError(ValueError):
    """A schema file or schema mapping is malformed or inconsistent with the CSV."""


class DataValidationError(ValueError):
    """CSV content violates the dataset contract (non-binary label, NaN, ...)."""


class SplitError(ValueError):
    """A split request cannot be satisfied (empty dataset, empty split, ...)."""


@dataclass(frozen=True)
class Sample:
    """One row of a dataset: feature vector, binary label, binary group."""

    features: np.ndarray
    label: int
    group: int
    concept_tag: Optional[int] = None


@dataclass(frozen=True)
class Split:
    """Disjoint index lists covering a dataset."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self) -> None:
        all_idx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(np.unique(all_idx)) != all_idx.size:
            raise SplitError("split index lists overlap")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable tabular dataset with optional split assignment.

    Attributes
    ----------
    X : (n, d) float64 feature matrix.
    y : (n,) int labels in {0, 1}.
    group : (n,) int sensitive-attribute values in {0, 1}.
    feature_names : one name per column of X.
    categorical_mask : True for columns holding binary categorical codes.
    split : (n,) int in {0 train, 1 val, 2 test}, or None before splitting.
    concept_tag : optional (n,) int array of externally assigned concept ids.
    """

    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    feature_names: tuple
    categorical_mask: np.ndarray
    split: Optional[np.ndarray] = None
    concept_tag: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        group = np.ascontiguousarray(self.group, dtype=np.int64)
        if X.ndim != 2:
            raise DataValidationError("X must be 2-dimensional")
        n, d = X.shape
        if y.shape != (n,) or group.shape != (n,):
            raise DataValidationError("X, y, group lengths disagree")
        if not np.isfinite(X).all():
            raise DataValidationError("features contain NaN or infinite values")
        if not np.isin(y, (0, 1)).all():
            raise DataValidationError("labels must be binary-coded {0,1}")
        if not np.isin(group, (0, 1)).all():
            raise DataValidationError("group values must be binary-coded {0,1}")
        if len(self.feature_names) != d:
            raise DataValidationError("feature_names length does not match X")
        mask = np.ascontiguousarray(self.categorical_mask, dtype=bool)
        if mask.shape != (d,):
            raise DataValidationError("categorical_mask length does not match X")
        split = self.split
        if split is not None:
            split = np.ascontiguousarray(split, dtype=np.int64)
            if split.shape != (n,) or not np.isin(split, (0, 1, 2)).all():
                raise DataValidationError("split must assign each row to {0,1,2}")
        tags = self.concept_tag
        if tags is not None:
            tags = np.ascontiguousarray(tags, dtype=np.int64)
            if tags.shape != (n,):
                raise DataValidationError("concept_tag length does not match X")
        for name, value in (
            ("X", X), ("y", y), ("group", group),
            ("categorical_mask", mask), ("split", split), ("concept_tag", tags),
        ):
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    # -- basic accessors -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> Sample:
        tag = None if self.concept_tag is None else int(self.concept_tag[i])
        return Sample(self.X[i], int(self.y[i]), int(self.group[i]), tag)

    def _split_idx(self, code: int) -> np.ndarray:
        if self.split is None:
            raise SplitError("dataset has no split assignment; call split_dataset first")
        return np.flatnonzero(self.split == code)

    @property
    def train_idx(self) -> np.ndarray:
        return self._split_idx(0)

    @property
    def val_idx(self) -> np.ndarray:
        return self._split_idx(1)

    @property
    def test_idx(self) -> np.ndarray:
        return self._split_idx(2)

    def split_indices(self) -> Split:
        return Split(self.train_idx, self.val_idx, self.test_idx)

    def fingerprint(self) -> str:
        """Stable content hash, used to tie trained models to their data."""
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        h.update(self.group.tobytes())
        if self.split is not None:
            h.update(self.split.tobytes())
        return h.hexdigest()

    # -- copy-on-write helpers -----------------------------------------------

    def with_split(self, split: np.ndarray) -> "Dataset":
        return replace(self, split=split)

    def replace_rows(
        self,
        idx: Sequence[int],
        X: Optional[np.ndarray] = None,
        y: Optional[np.ndarray] = None,
        group: Optional[np.ndarray] = None,
    ) -> "Dataset":
        """Return a copy with the given rows overwritten field-by-field."""
        idx = np.asarray(idx, dtype=np.int64)
        new_X, new_y, new_g = self.X.copy(), self.y.copy(), self.group.copy()
        if X is not None:
            new_X[idx] = X
        if y is not None:
            new_y[idx] = y
        if group is not None:
            new_g[idx] = group
        return replace(self, X=new_X, y=new_y, group=new_g)

    def drop_rows(self, idx: Sequence[int]) -> "Dataset":
        keep = np.setdiff1d(np.arange(self.n), np.asarray(idx, dtype=np.int64))
        tags = None if self.concept_tag is None else self.concept_tag[keep]
        split = None if self.split is None else self.split[keep]
        return replace(
            self, X=self.X[keep], y=self.y[keep], group=self.group[keep],
            split=split, concept_tag=tags,
        )

    def append_rows(
        self, X: np.ndarray, y: np.ndarray, group: np.ndarray, split_code: int = 0
    ) -> "Dataset":
        """Return a copy with new rows appended and assigned to one split."""
        if self.split is None:
            raise SplitError("cannot append split-assigned rows to an unsplit dataset")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        k = X.shape[0]
        tags = self.concept_tag
        if tags is not None:
            tags = np.concatenate([tags, np.zeros(k, dtype=np.int64)])
        return replace(
            self,
            X=np.vstack([self.X, X]),
            y=np.concatenate([self.y, np.asarray(y, dtype=np.int64)]),
            group=np.concatenate([self.group, np.asarray(group, dtype=np.int64)]),
            split=np.concatenate([self.split, np.full(k, split_code, dtype=np.int64)]),
            concept_tag=tags,
        )


# -- schema files --------------------------------------------------------------


def parse_schema(mapping: Mapping[str, str]) -> dict:
    """Normalize a column->role mapping into a structured schema description.

    Roles are ``feature``, ``label``, ``group``, ``concept``, ``ignore``. A
    column may carry several comma-separated roles (e.g. ``group,feature`` to
    keep the sensitive attribute in the feature matrix). A feature role may be
    qualified as ``feature:categorical`` or ``feature:numeric`` to override the
    automatic binary-column detection.
    """
    out = {"label": None, "group": None, "concept": None,
           "features": [], "categorical": {}, "ignored": set()}
    for column, value in mapping.items():
        roles = [tok.strip() for tok in str(value).split(",") if tok.strip()]
        if not roles:
            raise SchemaError(f"column {column!r} has no role")
        for token in roles:
            role, _, qualifier = token.partition(":")
            if role not in _ROLES:
                raise SchemaError(f"unknown role {token!r} for column {column!r}")
            if qualifier and (role != "feature" or qualifier not in _FEATURE_QUALIFIERS):
                raise SchemaError(f"bad qualifier in {token!r} for column {column!r}")
            if role == "feature":
                out["features"].append(column)
                if qualifier:
                    out["categorical"][column] = qualifier == "categorical"
            elif role == "ignore":
                out["ignored"].add(column)
            else:
                if out[role] is not None:
                    raise SchemaError(f"duplicate {role} column: {column!r}")
                out[role] = column
    if out["label"] is None:
        raise SchemaError("schema declares no label column")
    if out["group"] is None:
        raise SchemaError("schema declares no group column")
    if not out["features"]:
        raise SchemaError("schema declares no feature columns")
    return out


def read_schema(path) -> dict:
    """Read a ``column=role`` text file (one entry per line, # comments)."""
    mapping: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'column=role'")
        column, _, value = line.partition("=")
        column = column.strip()
        if column in mapping:
            raise SchemaError(f"{path}:{lineno}: column {column!r} listed twice")
        mapping[column] = value.strip()
    return mapping


def write_schema(path, mapping: Mapping[str, str]) -> None:
    lines = [f"{column}={value}" for column, value in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# -- CSV I/O ---------------------------------------------------------------------


def _parse_binary(raw: str, column: str, row: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise DataValidationError(
            f"row {row}: column {column!r} is not numeric: {raw!r}") from None
    if value not in (0.0, 1.0):
        raise DataValidationError(
            f"row {row}: column {column!r} must be binary-coded, got {raw!r}")
    return int(value)


def load_csv(path, schema: Mapping[str, str]) -> Dataset:
    """Load a headered CSV into a :class:`Dataset` according to ``schema``.

    Row order is preserved. Rows with missing or non-finite values are
    rejected rather than imputed.
    """
    spec = parse_schema(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        rows = list(reader)

    declared = set(spec["features"]) | {spec["label"], spec["group"]}
    if spec["concept"]:
        declared.add(spec["concept"])
    missing = declared - set(header)
    if missing:
        raise SchemaError(f"{path}: columns missing from CSV: {sorted(missing)}")
    unmapped = set(header) - declared - spec["ignored"]
    if unmapped:
        raise SchemaError(
            f"{path}: columns not covered by the schema: {sorted(unmapped)} "
            "(map them or mark them 'ignore')")

    col = {name: header.index(name) for name in header}
    n = len(rows)
    feature_names = [f for f in header if f in set(spec["features"])]
    d = len(feature_names)
    X = np.empty((n, d), dtype=np.float64)
    y = np.empty(n, dtype=np.int64)
    group = np.empty(n, dtype=np.int64)
    tags = np.empty(n, dtype=np.int64) if spec["concept"] else None

    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataValidationError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        for j, name in enumerate(feature_names):
            raw = row[col[name]]
            try:
                X[i, j] = float(raw)
            except ValueError:
                raise DataValidationError(
                    f"row {i}: feature {name!r} is not numeric: {raw!r}") from None
        y[i] = _parse_binary(row[col[spec["label"]]], spec["label"], i)
        group[i] = _parse_binary(row[col[spec["group"]]], spec["group"], i)
        if tags is not None:
            tags[i] = int(float(row[col[spec["concept"]]]))
    if not np.isfinite(X).all():
        bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
        raise DataValidationError(f"row {bad}: non-finite feature value")

    categorical = _categorical_mask(X, feature_names, spec["categorical"])
    return Dataset(X=X, y=y, group=group, feature_names=tuple(feature_names),
                   categorical_mask=categorical, concept_tag=tags)


def _categorical_mask(X: np.ndarray, names: Sequence[str], overrides: Mapping[str, bool]) -> np.ndarray:
    # Default: a feature column whose observed values all lie in {0,1} is
    # treated as a binary categorical code. Schema qualifiers override.
    mask = np.array([np.isin(X[:, j], (0.0, 1.0)).all() for j in range(X.shape[1])])
    for j, name in enumerate(names):
        if name in overrides:
            mask[j] = overrides[name]
    return mask


def save_csv(ds: Dataset, path) -> None:
    """Write a dataset back to CSV (features, then label and group columns).

    Floats are rendered with 17 significant digits, which round-trips float64
    exactly; loading the file back yields a bit-identical feature matrix.
    """
    reserved = {"label", "group", "concept"}
    clash = reserved & set(ds.feature_names)
    if clash:
        raise DataValidationError(f"feature names collide with reserved columns: {sorted(clash)}")
    header = list(ds.feature_names) + ["label", "group"]
    if ds.concept_tag is not None:
        header.append("concept")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [FLOAT_FORMAT % v for v in ds.X[i]]
            row += [str(int(ds.y[i])), str(int(ds.group[i]))]
            if ds.concept_tag is not None:
                row.append(str(int(ds.concept_tag[i])))
            writer.writerow(row)


def reload_schema_for(ds: Dataset) -> dict:
    """Schema mapping that re-ingests the output of :func:`save_csv`."""
    mapping = {}
    for j, name in enumerate(ds.feature_names):
        qualifier = "categorical" if ds.categorical_mask[j] else "numeric"
        mapping[name] = f"feature:{qualifier}"
    mapping["label"] = "label"
    mapping["group"] = "group"
    if ds.concept_tag is not None:
        mapping["concept"] = "concept"
    return mapping


# -- splitting -------------------------------------------------------------------


def split_sizes(n: int, fractions: Sequence[float]) -> tuple:
    """Floor each fraction, then hand leftover rows to val, test, train in turn.

    Val gets the first leftover row so that small datasets keep a non-empty
    validation split.
    """
    f_tr, f_val, f_te = fractions
    sizes = [math.floor(n * f_tr), math.floor(n * f_val), math.floor(n * f_te)]
    leftover = n - sum(sizes)
    for slot in (1, 2, 0):
        if leftover == 0:
            break
        sizes[slot] += 1
        leftover -= 1
    return tuple(sizes)


def split_dataset(
    ds: Dataset,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> Dataset:
    """Assign train/val/test splits by a seeded shuffle.

    Identical (dataset, fractions, seed) always produce identical splits.
    """
    if ds.n == 0:
        raise SplitError("cannot split an empty dataset")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)!r}")
    n_tr, n_val, n_te = split_sizes(ds.n, fractions)
    for name, size in zip(SPLIT_NAMES, (n_tr, n_val, n_te)):
        if size == 0:
            raise SplitError(f"the {name} split would receive zero samples (n={ds.n})")
    perm = np.random.default_rng(seed).permutation(ds.n)
    split = np.empty(ds.n, dtype=np.int64)
    split[perm[:n_tr]] = 0
    split[perm[n_tr:n_tr + n_val]] = 1
    split[perm[n_tr + n_val:]] = 2
    return ds.with_split(split)
