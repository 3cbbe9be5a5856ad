"""Data containers, CSV ingestion and preprocessing (rescaling, centering, whitening).

A :class:`DataSet` is an immutable matrix of real values (rows are
realizations, columns are attributes) together with attribute names and a
record of the preprocessing steps applied so far.  Preprocessing functions
return new datasets; the transform parameters (column minima/ranges, means,
whitening matrix) are kept on the result so projections of fresh data can be
mapped through the identical pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

COV_TOLERANCE = 1e-8


@dataclass(frozen=True)
class Transform:
    """One preprocessing step: ``kind`` in {rescale_unit, center, whiten}."""

    kind: str
    shift: np.ndarray
    # Diagonal scale for rescale_unit, full matrix for whiten, None for center.
    scale: np.ndarray | None = None

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = values - self.shift
        if self.kind == "rescale_unit":
            out = out / self.scale
        elif self.kind == "whiten":
            out = out @ self.scale
        return out

    def to_jsonable(self) -> dict:
        d = {"kind": self.kind, "shift": self.shift.tolist()}
        if self.scale is not None:
            d["scale"] = self.scale.tolist()
        return d

    @staticmethod
    def from_jsonable(d: dict) -> "Transform":
        scale = np.asarray(d["scale"], dtype=float) if "scale" in d else None
        return Transform(d["kind"], np.asarray(d["shift"], dtype=float), scale)


@dataclass(frozen=True)
class DataSet:
    """An n x m real matrix with attribute names and preprocessing state.

    Invariants: n >= 2, m >= 1, all values finite.  ``transforms`` records the
    preprocessing already applied, in order.
    """

    values: np.ndarray
    attribute_names: tuple[str, ...]
    rescaled_unit: bool = False
    centered: bool = False
    whitened: bool = False
    transforms: tuple[Transform, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"expected a 2-d matrix, got shape {values.shape}")
        n, m = values.shape
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if m < 1:
            raise DataError("need at least 1 column")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        if len(self.attribute_names) != m:
            raise DataError(
                f"{len(self.attribute_names)} attribute names for {m} columns"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.values.shape[1]


def from_values(values, names=None) -> DataSet:
    """Wrap a plain array as a DataSet with generated names if none given."""
    values = np.asarray(values, dtype=float)
    if names is None:
        names = tuple(f"col_{j}" for j in range(values.shape[1]))
    return DataSet(values, tuple(names))


def load_csv(path, has_header: bool = True) -> DataSet:
    """Load a comma-separated numeric file.

    Every cell must parse as a finite real number and every row must have the
    same number of columns.  Errors name the offending row and column.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    names: tuple[str, ...] | None = None
    if has_header:
        if not rows:
            raise DataError(f"{path}: no data rows")
        names = tuple(cell.strip() for cell in rows[0])
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(rows[0])
    data = np.empty((len(rows), width), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(
                f"{path}: row {i} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"{path}: cannot parse cell at row {i}, column {j}: {cell!r}"
                ) from exc
            if not np.isfinite(value):
                raise DataError(
                    f"{path}: non-finite value at row {i}, column {j}: {cell!r}"
                )
            data[i, j] = value

    if names is None:
        names = tuple(f"col_{j}" for j in range(width))
    elif len(names) != width:
        raise DataError(
            f"{path}: header has {len(names)} names but rows have {width} cells"
        )
    return DataSet(data, names)


def save_csv(ds_or_values, path, names=None) -> None:
    """Write a DataSet or plain matrix as CSV with a header row.

    Floats are written with ``repr`` so the file round-trips bit-exactly.
    """
    if isinstance(ds_or_values, DataSet):
        values = ds_or_values.values
        names = ds_or_values.attribute_names
    else:
        values = np.asarray(ds_or_values, dtype=float)
        if names is None:
            names = [f"col_{j}" for j in range(values.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def rescale_unit(ds: DataSet) -> DataSet:
    """Map every column affinely onto [0, 1].

    Each column must have max > min; the original minima and ranges are kept
    on the result for inverse mapping.  Applying the function twice is a
    no-op on the second application.
    """
    mins = ds.values.min(axis=0)
    maxs = ds.values.max(axis=0)
    ranges = maxs - mins
    flat = np.nonzero(ranges == 0)[0]
    if flat.size:
        name = ds.attribute_names[flat[0]]
        raise DataError(f"constant column {name!r} (index {flat[0]}) cannot be rescaled")
    t = Transform("rescale_unit", mins, ranges)
    return replace(
        ds,
        values=t.apply(ds.values),
        rescaled_unit=True,
        transforms=ds.transforms + (t,),
    )


def center(ds: DataSet) -> DataSet:
    """Subtract the column means."""
    mu = ds.values.mean(axis=0)
    t = Transform("center", mu)
    return replace(ds, values=t.apply(ds.values), centered=True,
                   transforms=ds.transforms + (t,))


def whiten(ds: DataSet) -> DataSet:
    """Center the data and transform it to identity empirical covariance.

    Uses the symmetric (ZCA) whitening matrix C^{-1/2} built from the
    eigendecomposition of the covariance C = X~^T X~ / n.  Requires n > m and
    a nonsingular covariance.
    """
    n, m = ds.values.shape
    if n <= m:
        raise DataError(f"whitening requires more rows than columns (n={n}, m={m})")
    mu = ds.values.mean(axis=0)
    xc = ds.values - mu
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= max(evals.max(), 1.0) * 1e-12:
        raise DataError(
            "singular covariance; consider dropping redundant columns before whitening"
        )
    w = (evecs / np.sqrt(evals)) @ evecs.T
    t = Transform("whiten", mu, w)
    return replace(ds, values=t.apply(ds.values), centered=True, whitened=True,
                   transforms=ds.transforms + (t,))


def apply_transforms(values: np.ndarray, transforms) -> np.ndarray:
    """Push raw rows through a stored preprocessing chain."""
    out = np.asarray(values, dtype=float)
    for t in transforms:
        out = t.apply(out)
    return out
