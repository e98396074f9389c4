"""Core data containers: observational datasets, splits, prediction tables.

All containers are immutable after construction (arrays are set read-only),
so they can be shared freely across parallel workers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .validation import (
    ValidationError,
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_both_arms,
    check_consistent_length,
    require,
)

SPLIT_NAMES = ("train", "valid", "test")


def _freeze(a: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservationalDataset:
    """Covariates, binary treatment, factual outcome, plus optional oracle fields.

    Oracle fields (both potential outcomes and the true conditional effect)
    are carried for evaluation only; no selection code may read them.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    y0_oracle: Optional[np.ndarray] = None
    y1_oracle: Optional[np.ndarray] = None
    true_cate_oracle: Optional[np.ndarray] = None

    def __post_init__(self):
        X = as_float_matrix(self.covariates, "covariates")
        t = as_binary_vector(self.treatment, "treatment")
        y = as_float_vector(self.outcome, "outcome")
        n = check_consistent_length(X, t, y, names=["covariates", "treatment", "outcome"])
        require(n >= 2, f"dataset needs n >= 2, got n={n}")
        check_both_arms(t, "dataset")
        oracle = {}
        for name in ("y0_oracle", "y1_oracle", "true_cate_oracle"):
            val = getattr(self, name)
            if val is not None:
                val = as_float_vector(val, name)
                check_consistent_length(y, val, names=["outcome", name])
                oracle[name] = val
        if "y0_oracle" in oracle and "y1_oracle" in oracle:
            expected = np.where(t == 1, oracle["y1_oracle"], oracle["y0_oracle"])
            if not np.array_equal(expected, y):
                i = int(np.flatnonzero(expected != y)[0])
                raise ValidationError(
                    f"outcome[{i}] does not equal the potential outcome under the "
                    f"observed treatment (consistency violation)"
                )
        object.__setattr__(self, "covariates", _freeze(X))
        object.__setattr__(self, "treatment", _freeze(t))
        object.__setattr__(self, "outcome", _freeze(y))
        for name in ("y0_oracle", "y1_oracle", "true_cate_oracle"):
            object.__setattr__(self, name, _freeze(oracle.get(name)))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.treatment == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.treatment == 0))

    @property
    def treated_fraction(self) -> float:
        return self.n_treated / self.n

    @property
    def has_oracle(self) -> bool:
        return self.true_cate_oracle is not None

    def subset(self, idx: np.ndarray) -> "ObservationalDataset":
        """Row-subset view (copies); raises if an arm goes missing."""
        idx = np.asarray(idx, dtype=np.int64)
        return ObservationalDataset(
            covariates=self.covariates[idx],
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            y0_oracle=None if self.y0_oracle is None else self.y0_oracle[idx],
            y1_oracle=None if self.y1_oracle is None else self.y1_oracle[idx],
            true_cate_oracle=None
            if self.true_cate_oracle is None
            else self.true_cate_oracle[idx],
        )


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/valid/test index sets covering 0..n-1."""

    train_idx: np.ndarray
    valid_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        parts = []
        for name in ("train_idx", "valid_idx", "test_idx"):
            a = np.asarray(getattr(self, name), dtype=np.int64)
            require(a.size > 0, f"{name} must be nonempty")
            parts.append(a)
            object.__setattr__(self, name, _freeze(a))
        combined = np.concatenate(parts)
        n = combined.size
        if np.unique(combined).size != n or combined.min() != 0 or combined.max() != n - 1:
            raise ValidationError("splits must partition 0..n-1 with no overlap")

    @property
    def n(self) -> int:
        return self.train_idx.size + self.valid_idx.size + self.test_idx.size

    def indices(self, split: str) -> np.ndarray:
        require(split in SPLIT_NAMES, f"unknown split {split!r}")
        return getattr(self, f"{split}_idx")


@dataclass(frozen=True)
class PredictionTable:
    """Cached effect predictions of one candidate on one split."""

    candidate_id: str
    split: str
    cate_hat: np.ndarray

    def __post_init__(self):
        require(self.split in SPLIT_NAMES, f"unknown split {self.split!r}")
        vals = as_float_vector(self.cate_hat, "cate_hat")
        object.__setattr__(self, "cate_hat", _freeze(vals))


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV column names onto dataset fields.

    Covariate columns default to every column not otherwise mapped.
    """

    treatment: str = "t"
    outcome: str = "y"
    y0: Optional[str] = "y0"
    y1: Optional[str] = "y1"
    true_cate: Optional[str] = "tau"
    covariates: Optional[Sequence[str]] = None


def load_dataset(path, schema: ColumnSchema = ColumnSchema()) -> ObservationalDataset:
    """Read a dataset from a headered CSV file.

    Oracle columns are loaded when mapped and present; a mapped-but-absent
    optional column is simply skipped. Errors name the offending row/column.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file does not exist: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"empty dataset file: {path}") from None
        rows = list(reader)
    if not rows:
        raise ValidationError(f"dataset file has a header but no rows: {path}")
    col = {name: i for i, name in enumerate(header)}

    for required in (schema.treatment, schema.outcome):
        if required not in col:
            raise ValidationError(f"missing column {required!r} in {path}")

    optional = {}
    for fieldname, colname in (
        ("y0_oracle", schema.y0),
        ("y1_oracle", schema.y1),
        ("true_cate_oracle", schema.true_cate),
    ):
        if colname is not None and colname in col:
            optional[fieldname] = colname

    if schema.covariates is not None:
        cov_cols = list(schema.covariates)
        for c in cov_cols:
            if c not in col:
                raise ValidationError(f"missing covariate column {c!r} in {path}")
    else:
        mapped = {schema.treatment, schema.outcome} | set(optional.values())
        cov_cols = [c for c in header if c not in mapped]
    if not cov_cols:
        raise ValidationError(f"no covariate columns resolved in {path}")

    def parse(row_i: int, colname: str) -> float:
        raw = rows[row_i][col[colname]]
        try:
            value = float(raw)
        except ValueError:
            raise ValidationError(
                f"non-numeric value {raw!r} at row {row_i}, column {colname!r}"
            ) from None
        if not np.isfinite(value):
            raise ValidationError(f"non-finite value at row {row_i}, column {colname!r}")
        return value

    n = len(rows)
    X = np.empty((n, len(cov_cols)))
    for i in range(n):
        if len(rows[i]) != len(header):
            raise ValidationError(f"row {i} has {len(rows[i])} fields, expected {len(header)}")
        for j, c in enumerate(cov_cols):
            X[i, j] = parse(i, c)
    t_raw = np.array([parse(i, schema.treatment) for i in range(n)])
    bad = np.argwhere(~np.isin(t_raw, (0.0, 1.0)))
    if bad.size:
        raise ValidationError(f"non-binary treatment at row {int(bad[0, 0])}")
    y = np.array([parse(i, schema.outcome) for i in range(n)])
    fields = {
        name: np.array([parse(i, c) for i in range(n)]) for name, c in optional.items()
    }
    return ObservationalDataset(
        covariates=X, treatment=t_raw.astype(np.int64), outcome=y, **fields
    )


def write_dataset(ds: ObservationalDataset, path, schema: ColumnSchema = ColumnSchema()) -> None:
    """Write a dataset as CSV; floats use shortest round-trip repr."""
    path = Path(path)
    cov_cols = list(schema.covariates) if schema.covariates is not None else [
        f"x{j}" for j in range(ds.d)
    ]
    require(len(cov_cols) == ds.d, "covariate column names must match dimension")
    header = list(cov_cols) + [schema.treatment, schema.outcome]
    extras = []
    for colname, vals in (
        (schema.y0, ds.y0_oracle),
        (schema.y1, ds.y1_oracle),
        (schema.true_cate, ds.true_cate_oracle),
    ):
        if vals is not None:
            require(colname is not None, "oracle field present but unmapped in schema")
            header.append(colname)
            extras.append(vals)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.covariates[i]]
            row.append(str(int(ds.treatment[i])))
            row.append(repr(float(ds.outcome[i])))
            row.extend(repr(float(v[i])) for v in extras)
            writer.writerow(row)


def split_dataset(
    ds: ObservationalDataset,
    ratios: tuple = (0.49, 0.21, 0.30),
    seed: int = 0,
) -> SplitAssignment:
    """Seeded random permutation followed by a contiguous three-way cut.

    A split missing a treatment arm is an error ("degenerate split") rather
    than being silently reseeded.
    """
    r = np.asarray(ratios, dtype=np.float64)
    require(r.shape == (3,), "ratios must have three entries")
    require(np.all(r > 0), "ratios must be positive")
    require(abs(r.sum() - 1.0) <= 1e-9, f"ratios must sum to 1, got {r.sum()!r}")
    n = ds.n
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(r[0] * n))
    n_valid = int(np.floor(r[1] * n))
    cuts = (perm[:n_train], perm[n_train : n_train + n_valid], perm[n_train + n_valid :])
    for name, idx in zip(SPLIT_NAMES, cuts):
        if idx.size == 0:
            raise ValidationError(f"degenerate split: {name} split is empty (n={n})")
        arm = ds.treatment[idx]
        if not (np.any(arm == 1) and np.any(arm == 0)):
            raise ValidationError(
                f"degenerate split: {name} split lacks a treatment arm (seed={seed})"
            )
    return SplitAssignment(train_idx=cuts[0], valid_idx=cuts[1], test_idx=cuts[2])


@dataclass(frozen=True)
class ColumnStats:
    """Per-column location/scale used for standardization (population sd)."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _freeze(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "sd", _freeze(np.asarray(self.sd, dtype=np.float64)))


def standardize_columns(X, stats: Optional[ColumnStats] = None):
    """Center/scale columns to mean 0, sd 1 (population convention).

    Zero-variance columns map to 0. Returns the transformed matrix together
    with the stats so other splits can reuse the same transform.
    """
    X = as_float_matrix(X, "X")
    if stats is None:
        stats = ColumnStats(mean=X.mean(axis=0), sd=X.std(axis=0))
    require(stats.mean.shape[0] == X.shape[1], "stats dimension mismatch")
    sd = stats.sd
    safe = np.where(sd > 0, sd, 1.0)
    Z = (X - stats.mean) / safe
    Z[:, sd == 0] = 0.0
    return Z, stats


def destandardize_columns(Z, stats: ColumnStats) -> np.ndarray:
    """Inverse of :func:`standardize_columns` (constant columns recover their mean)."""
    Z = as_float_matrix(Z, "Z")
    return Z * stats.sd + stats.mean
