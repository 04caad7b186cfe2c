"""Tabular scenario-parameter data: CSV ingestion, validation, splitting.

All in-memory data is a row-major ``(n, d)`` float64 matrix with named
columns. Values are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .marginals import MarginalModel

# Probability-integral-transform outputs are clipped into
# [EPS_CLIP, 1 - EPS_CLIP]: quantile and copula formulas are singular at 0/1.
EPS_CLIP = 1e-9


class DataError(ValueError):
    """Raised for malformed or invalid tabular input."""


@dataclass(frozen=True)
class Dataset:
    """An ``(n, d)`` matrix of finite reals with unique column names."""

    columns: list[str]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {vals.shape}")
        n, d = vals.shape
        if n < 1 or d < 1:
            raise DataError(f"need at least one row and one column, got {n}x{d}")
        if len(self.columns) != d:
            raise DataError(
                f"{len(self.columns)} column names for {d} data columns"
            )
        if any(not c for c in self.columns):
            raise DataError("column names must be nonempty")
        if len(set(self.columns)) != d:
            raise DataError("column names must be unique")
        if not np.all(np.isfinite(vals)):
            i, j = np.argwhere(~np.isfinite(vals))[0]
            raise DataError(
                f"non-finite value at row {i + 1}, column {self.columns[j]!r}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class UnitDataset:
    """PIT-transformed data: every entry in [EPS_CLIP, 1 - EPS_CLIP]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DataError(f"unit values must be nonempty 2-D, got {vals.shape}")
        if vals.min() < EPS_CLIP or vals.max() > 1.0 - EPS_CLIP:
            raise DataError("unit values outside the clipped (0, 1) range")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def load_csv(path: str | os.PathLike) -> Dataset:
    """Load a comma-separated file with a header row into a Dataset.

    Every cell after the header must parse as a finite decimal number.
    Errors name the offending line and column.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty input: {path}") from None
        columns = [c.strip() for c in header]
        rows: list[list[float]] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(columns):
                raise DataError(
                    f"line {lineno}: expected {len(columns)} cells, got {len(rec)}"
                )
            out = []
            for j, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"line {lineno}, column {columns[j]!r}: "
                        f"not a number: {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"line {lineno}, column {columns[j]!r}: "
                        f"non-finite value {cell!r}"
                    )
                out.append(v)
            rows.append(out)
    if not rows:
        raise DataError(f"no data rows in {path}")
    return Dataset(columns=columns, values=np.array(rows, dtype=float))


def save_csv(ds: Dataset, path: str | os.PathLike) -> None:
    """Write a Dataset as CSV; floats use shortest exact representation."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ds.columns)
            for row in ds.values:
                writer.writerow([repr(float(v)) for v in row])
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def split(ds: Dataset, holdout_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministically shuffle and split into (train, holdout) parts.

    The two parts are disjoint and together contain every input row.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise DataError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    if ds.n < 2:
        raise DataError("need at least 2 rows to split")
    n_hold = int(round(ds.n * holdout_fraction))
    if n_hold < 1 or n_hold >= ds.n:
        raise DataError(
            f"holdout_fraction {holdout_fraction} leaves an empty part for n={ds.n}"
        )
    perm = np.random.default_rng(seed).permutation(ds.n)
    hold_idx = np.sort(perm[:n_hold])
    train_idx = np.sort(perm[n_hold:])
    return (
        Dataset(ds.columns, ds.values[train_idx]),
        Dataset(ds.columns, ds.values[hold_idx]),
    )


def to_unit(ds: Dataset, m: "MarginalModel") -> UnitDataset:
    """Apply the per-dimension probability integral transform u = F_j(x)."""
    if m.d != ds.d:
        raise DataError(f"marginal model has d={m.d}, data has d={ds.d}")
    if m.columns != ds.columns:
        raise DataError("marginal model column names do not match the data")
    u = m.cdf_matrix(ds.values)
    return UnitDataset(np.clip(u, EPS_CLIP, 1.0 - EPS_CLIP))
