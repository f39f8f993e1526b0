"""Typed datasets, CSV ingestion, standardization and metrics.

A :class:`Dataset` is an immutable, ordered collection of equally long
columns. Each column is numeric (real vector), categorical (integer codes
with a label table) or a rotation column (a stack of 3x3 matrices in SO(3)).
Estimators address columns by index or by name.

Metrics act on a subset of columns. The default ``product`` metric treats
every column as its own block and combines the per-block distances as
``sqrt(sum_b w_b d_b**2)``; on purely numeric columns with unit weights this
is the Euclidean distance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    EmptyData,
    IncompatibleMetric,
    InvalidRotation,
    MalformedCsv,
    TypeMismatch,
    UnknownColumn,
    ZeroVariance,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ROTATION = "rotation"

_SCHEMA_KINDS = {"numeric": NUMERIC, "categorical": CATEGORICAL, "rotation9": ROTATION}
ROTATION_TOL = 1e-8

ColumnKey = Union[int, str]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def check_rotations(mats: np.ndarray, tol: float = ROTATION_TOL) -> None:
    """Raise :class:`InvalidRotation` unless every matrix lies in SO(3)."""
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or mats.shape[1:] != (3, 3):
        raise InvalidRotation(f"expected an (n, 3, 3) array, got shape {mats.shape}")
    gram = np.einsum("nki,nkj->nij", mats, mats)
    ortho_err = np.abs(gram - np.eye(3)).max(axis=(1, 2))
    det_err = np.abs(np.linalg.det(mats) - 1.0)
    bad = np.flatnonzero((ortho_err > tol) | (det_err > tol) | ~np.isfinite(det_err))
    if bad.size:
        i = int(bad[0])
        raise InvalidRotation(
            f"row {i}: |R^T R - I|_max = {ortho_err[i]:.3g}, det = {det_err[i] + 1:.6g}"
        )


@dataclass(frozen=True, eq=False)
class Column:
    """One named column.

    Parameters
    ----------
    name : str
        Column label, unique within a dataset.
    kind : {"numeric", "categorical", "rotation"}
        Payload type.
    values : ndarray
        ``(n,)`` floats, ``(n,)`` integer codes, or ``(n, 3, 3)`` matrices.
    labels : tuple of str
        Label table for categorical columns; ``labels[code]`` is the label.
    """

    name: str
    kind: str
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        if self.kind == NUMERIC:
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1:
                raise TypeMismatch(f"numeric column {self.name!r} must be 1-D")
            if not np.all(np.isfinite(vals)):
                raise MalformedCsv(f"column {self.name!r} has missing or non-finite values")
        elif self.kind == CATEGORICAL:
            vals = np.asarray(self.values, dtype=np.int64)
            if vals.ndim != 1:
                raise TypeMismatch(f"categorical column {self.name!r} must be 1-D")
            if vals.size and (vals.min() < 0 or vals.max() >= max(len(self.labels), 1)):
                raise TypeMismatch(f"categorical column {self.name!r} has codes outside its label table")
        elif self.kind == ROTATION:
            vals = np.asarray(self.values, dtype=float)
            check_rotations(vals)
        else:
            raise TypeMismatch(f"unknown column kind {self.kind!r}")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def categorical(cls, name: str, raw: Iterable) -> "Column":
        """Encode arbitrary hashable values with codes in first-appearance order."""
        table: dict = {}
        codes = []
        for v in raw:
            key = str(v)
            if key not in table:
                table[key] = len(table)
            codes.append(table[key])
        return cls(name, CATEGORICAL, np.asarray(codes, dtype=np.int64), tuple(table))

    def take(self, rows: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[rows], self.labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ordered collection of equally long columns."""

    columns: tuple

    def __post_init__(self):
        cols = tuple(self.columns)
        if not cols:
            raise EmptyData("a dataset needs at least one column")
        n = len(cols[0])
        if n == 0:
            raise EmptyData("a dataset needs at least one row")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise MalformedCsv(f"duplicate column names in {names}")
        for c in cols:
            if len(c) != n:
                raise MalformedCsv(f"column {c.name!r} has {len(c)} rows, expected {n}")
        object.__setattr__(self, "columns", cols)

    @classmethod
    def from_arrays(cls, data: Mapping[str, object], kinds: Mapping[str, str] | None = None) -> "Dataset":
        """Build a dataset from a mapping of name to array.

        Kinds are inferred when not given: ``(n, 3, 3)`` arrays become rotation
        columns, non-numeric dtypes become categorical, everything else numeric.
        """
        kinds = dict(kinds or {})
        cols = []
        for name, raw in data.items():
            kind = kinds.get(name)
            arr = np.asarray(raw)
            if kind is None:
                if arr.ndim == 3:
                    kind = ROTATION
                elif arr.dtype.kind in "biuf":
                    kind = NUMERIC
                else:
                    kind = CATEGORICAL
            if kind == CATEGORICAL:
                cols.append(Column.categorical(name, arr.tolist()))
            else:
                cols.append(Column(name, kind, arr))
        return cls(tuple(cols))

    @property
    def n(self) -> int:
        return len(self.columns[0])

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, key: ColumnKey) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= int(key) < len(self.columns):
                raise UnknownColumn(f"column index {key} out of range")
            return int(key)
        for i, c in enumerate(self.columns):
            if c.name == key:
                return i
        raise UnknownColumn(f"no column named {key!r}")

    def resolve(self, keys: Sequence[ColumnKey] | ColumnKey) -> tuple[int, ...]:
        if isinstance(keys, (str, int, np.integer)):
            keys = [keys]
        return tuple(self.index(k) for k in keys)

    def column(self, key: ColumnKey) -> Column:
        return self.columns[self.index(key)]

    def kinds(self, cols: Sequence[ColumnKey]) -> list[str]:
        return [self.column(c).kind for c in cols]

    def numeric_block(self, cols: Sequence[ColumnKey]) -> np.ndarray:
        """Stack numeric columns into an ``(n, len(cols))`` float matrix."""
        cols = self.resolve(cols)
        for c in cols:
            if self.columns[c].kind != NUMERIC:
                raise TypeMismatch(f"column {self.columns[c].name!r} is not numeric")
        if not cols:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c].values for c in cols])

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(tuple(c.take(rows) for c in self.columns))

    def replace(self, updates: Mapping[ColumnKey, object]) -> "Dataset":
        """Return a copy with the payloads of some columns replaced (same kinds)."""
        new = list(self.columns)
        for key, vals in updates.items():
            i = self.index(key)
            old = new[i]
            new[i] = Column(old.name, old.kind, np.asarray(vals), old.labels)
        return Dataset(tuple(new))

    def add(self, column: Column) -> "Dataset":
        return Dataset(self.columns + (column,))


@dataclass(frozen=True)
class VariableRoles:
    """Column indices playing the response (Y), target (Z) and conditioning (X) roles."""

    y_cols: tuple
    z_cols: tuple
    x_cols: tuple = ()

    def __post_init__(self):
        y, z, x = (tuple(int(i) for i in c) for c in (self.y_cols, self.z_cols, self.x_cols))
        if not y:
            raise TypeMismatch("y_cols must be non-empty")
        if not z:
            raise TypeMismatch("z_cols must be non-empty")
        if len(set(y) | set(z) | set(x)) != len(y) + len(z) + len(x):
            raise TypeMismatch("y, z and x column lists must be disjoint")
        object.__setattr__(self, "y_cols", y)
        object.__setattr__(self, "z_cols", z)
        object.__setattr__(self, "x_cols", x)

    @classmethod
    def of(cls, ds: Dataset, y, z, x=()) -> "VariableRoles":
        """Resolve names or indices against ``ds``."""
        return cls(ds.resolve(y), ds.resolve(z), ds.resolve(x) if x is not None else ())

    @property
    def xz_cols(self) -> tuple:
        return self.x_cols + self.z_cols


# --------------------------------------------------------------------------- CSV


def load_schema(path: str | Path) -> dict[str, str]:
    """Read a ``name = kind`` (or ``name: kind``) schema file.

    Blank lines and ``#`` comments are ignored. Kinds are ``numeric``,
    ``categorical`` or ``rotation9``.
    """
    schema = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise MalformedCsv(f"schema line {lineno}: expected 'name = kind'")
        name, kind = (s.strip() for s in line.split(sep, 1))
        if kind not in _SCHEMA_KINDS:
            raise MalformedCsv(f"schema line {lineno}: unknown kind {kind!r}")
        schema[name] = kind
    return schema


def rotation_field_names(name: str) -> list[str]:
    """Header fields used for a rotation column, row-major."""
    return [f"{name}[{k}]" for k in range(9)]


def _parse_float(cell: str, row: int, name: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise MalformedCsv(f"row {row}: cannot parse {cell!r} in column {name!r}") from None
    if not math.isfinite(v):
        raise MalformedCsv(f"row {row}: non-finite value {cell!r} in column {name!r}")
    return v


def load_csv(path: str | Path, schema: Mapping[str, str] | str | Path | None = None) -> Dataset:
    """Read a CSV file with a header row into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        CSV file, UTF-8, comma separated, ``.`` decimal separator.
    schema : mapping or path-like, optional
        Column name to ``numeric``, ``categorical`` or ``rotation9``. Columns
        not mentioned are numeric. A rotation column ``R`` occupies the nine
        header fields ``R[0]`` ... ``R[8]`` in row-major order.

    Raises
    ------
    MalformedCsv
        Ragged rows, unparseable or missing cells.
    InvalidRotation
        A rotation block is not orthogonal with determinant one.
    EmptyData
        No header or no data rows.
    """
    if schema is None:
        schema = {}
    elif not isinstance(schema, Mapping):
        schema = load_schema(schema)
    for name, kind in schema.items():
        if kind not in _SCHEMA_KINDS:
            raise MalformedCsv(f"unknown schema kind {kind!r} for {name!r}")

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyData(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyData(f"{path}: no data rows")
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise MalformedCsv(f"{path}: row {k} has {len(r)} fields, header has {len(header)}")

    # group header fields into logical columns
    plan: list[tuple[str, str, list[int]]] = []
    pos = 0
    while pos < len(header):
        field_name = header[pos]
        base = field_name[:-3] if field_name.endswith("[0]") else None
        if base is not None and schema.get(base) == "rotation9":
            expected = rotation_field_names(base)
            if header[pos:pos + 9] != expected:
                raise MalformedCsv(f"rotation column {base!r} needs fields {expected}")
            plan.append((base, ROTATION, list(range(pos, pos + 9))))
            pos += 9
            continue
        if schema.get(field_name) == "rotation9":
            raise MalformedCsv(f"rotation column {field_name!r} must use fields {rotation_field_names(field_name)}")
        plan.append((field_name, _SCHEMA_KINDS[schema.get(field_name, "numeric")], [pos]))
        pos += 1
    missing = set(schema) - {p[0] for p in plan}
    if missing:
        raise MalformedCsv(f"schema mentions columns absent from the header: {sorted(missing)}")

    cols = []
    for name, kind, idx in plan:
        if kind == CATEGORICAL:
            cells = [r[idx[0]].strip() for r in body]
            for k, c in enumerate(cells, start=2):
                if c == "":
                    raise MalformedCsv(f"row {k}: missing value in column {name!r}")
            cols.append(Column.categorical(name, cells))
        elif kind == NUMERIC:
            vals = [_parse_float(r[idx[0]].strip(), k, name) for k, r in enumerate(body, start=2)]
            cols.append(Column(name, NUMERIC, np.asarray(vals)))
        else:
            mats = np.array(
                [[_parse_float(r[i].strip(), k, name) for i in idx] for k, r in enumerate(body, start=2)]
            ).reshape(-1, 3, 3)
            cols.append(Column(name, ROTATION, mats))
    return Dataset(tuple(cols))


def write_csv(ds: Dataset, path: str | Path) -> dict[str, str]:
    """Write ``ds`` as CSV and return the matching schema mapping.

    Floats are written with ``repr`` so a reload reproduces them bit for bit.
    """
    header: list[str] = []
    blocks = []
    schema = {}
    for c in ds.columns:
        if c.kind == NUMERIC:
            header.append(c.name)
            blocks.append([repr(float(v)) for v in c.values])
            schema[c.name] = "numeric"
        elif c.kind == CATEGORICAL:
            header.append(c.name)
            blocks.append([c.labels[v] for v in c.values])
            schema[c.name] = "categorical"
        else:
            header.extend(rotation_field_names(c.name))
            flat = c.values.reshape(len(c), 9)
            for k in range(9):
                blocks.append([repr(float(v)) for v in flat[:, k]])
            schema[c.name] = "rotation9"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(zip(*blocks))
    return schema


def write_schema(schema: Mapping[str, str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in schema.items()), encoding="utf-8")


# --------------------------------------------------------------------------- standardize


def standardize(ds: Dataset, cols: Sequence[ColumnKey]) -> Dataset:
    """Center numeric columns and scale them to unit sample variance (ddof=1).

    Raises
    ------
    ZeroVariance
        A target column is constant.
    """
    updates = {}
    for c in ds.resolve(cols):
        col = ds.columns[c]
        if col.kind != NUMERIC:
            raise TypeMismatch(f"cannot standardize non-numeric column {col.name!r}")
        v = col.values
        if len(v) < 2:
            raise ZeroVariance(f"column {col.name!r} needs at least two rows")
        sd = np.std(v, ddof=1)
        if not sd > 0:
            raise ZeroVariance(f"column {col.name!r} is constant")
        updates[c] = (v - v.mean()) / sd
    return ds.replace(updates)


# --------------------------------------------------------------------------- metrics

METRIC_FAMILIES = ("euclidean", "hamming01", "frobenius", "product")


@dataclass(frozen=True)
class MetricSpec:
    """Distance on a set of columns.

    Parameters
    ----------
    family : {"product", "euclidean", "hamming01", "frobenius"}
        ``euclidean`` needs numeric columns, ``hamming01`` categorical ones
        (distance = number of mismatching columns), ``frobenius`` rotation
        columns. ``product`` takes any mix and treats each column as one
        block: absolute difference for numeric, 0/1 for categorical, Frobenius
        norm for rotations.
    weights : tuple of float, optional
        Per-column weights for the ``product`` family (default all ones).
    """

    family: str = "product"
    weights: tuple | None = None

    def __post_init__(self):
        if self.family not in METRIC_FAMILIES:
            raise IncompatibleMetric(f"unknown metric family {self.family!r}")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if any(not (x >= 0 and math.isfinite(x)) for x in w):
                raise IncompatibleMetric("metric weights must be finite and nonnegative")
            object.__setattr__(self, "weights", w)

    def _check(self, ds: Dataset, cols: tuple) -> list[str]:
        kinds = [ds.columns[c].kind for c in cols]
        need = {"euclidean": NUMERIC, "hamming01": CATEGORICAL, "frobenius": ROTATION}.get(self.family)
        if need is not None and any(k != need for k in kinds):
            raise IncompatibleMetric(f"{self.family} metric requires {need} columns, got {kinds}")
        if self.weights is not None and self.family == "product" and len(self.weights) != len(cols):
            raise IncompatibleMetric(f"{len(self.weights)} weights for {len(cols)} columns")
        return kinds

    def embed(self, ds: Dataset, cols: Sequence[ColumnKey]) -> np.ndarray | None:
        """Coordinates whose Euclidean distances equal this metric, if such exist.

        Returns ``None`` for multi-column ``hamming01``, which has no exact
        Euclidean embedding.
        """
        cols = ds.resolve(cols)
        kinds = self._check(ds, cols)
        if self.family == "hamming01" and len(cols) > 1:
            return None
        weights = self.weights if (self.family == "product" and self.weights) else (1.0,) * len(cols)
        parts = []
        for c, kind, w in zip(cols, kinds, weights):
            vals = ds.columns[c].values
            scale = math.sqrt(w)
            if kind == NUMERIC:
                parts.append(scale * vals[:, None])
            elif kind == CATEGORICAL:
                onehot = np.zeros((len(vals), max(len(ds.columns[c].labels), 1)))
                onehot[np.arange(len(vals)), vals] = 1.0
                parts.append(onehot * (scale / math.sqrt(2.0)))
            else:
                parts.append(scale * vals.reshape(len(vals), 9))
        if not parts:
            return np.empty((ds.n, 0))
        return np.hstack(parts)

    def pairwise(self, ds: Dataset, cols: Sequence[ColumnKey]) -> np.ndarray:
        """Full ``n x n`` distance matrix computed block by block."""
        cols = ds.resolve(cols)
        kinds = self._check(ds, cols)
        n = ds.n
        if self.family == "hamming01":
            codes = np.column_stack([ds.columns[c].values for c in cols])
            return (codes[:, None, :] != codes[None, :, :]).sum(axis=2).astype(float)
        weights = self.weights if (self.family == "product" and self.weights) else (1.0,) * len(cols)
        sq = np.zeros((n, n))
        for c, kind, w in zip(cols, kinds, weights):
            vals = ds.columns[c].values
            if kind == NUMERIC:
                d2 = (vals[:, None] - vals[None, :]) ** 2
            elif kind == CATEGORICAL:
                d2 = (vals[:, None] != vals[None, :]).astype(float)
            else:
                flat = vals.reshape(n, 9)
                d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
            sq += w * d2
        return np.sqrt(sq)


def distance(m: MetricSpec, ds: Dataset, cols: Sequence[ColumnKey], i: int, j: int) -> float:
    """Distance between rows ``i`` and ``j`` restricted to ``cols``."""
    cols = ds.resolve(cols)
    kinds = m._check(ds, cols)
    if m.family == "hamming01":
        return float(sum(ds.columns[c].values[i] != ds.columns[c].values[j] for c in cols))
    weights = m.weights if (m.family == "product" and m.weights) else (1.0,) * len(cols)
    total = 0.0
    for c, kind, w in zip(cols, kinds, weights):
        vals = ds.columns[c].values
        if kind == NUMERIC:
            d2 = (vals[i] - vals[j]) ** 2
        elif kind == CATEGORICAL:
            d2 = float(vals[i] != vals[j])
        else:
            d2 = float(((vals[i] - vals[j]) ** 2).sum())
        total += w * d2
    return math.sqrt(total)
