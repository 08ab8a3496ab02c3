"""Masked tabular data model, CSV input/output and column statistics.

A :class:`MaskedTable` pairs a float matrix with a boolean mask (``True`` =
observed).  Masked cells hold ``NaN`` so that an accidental read is loud, but
no operation in the package treats them as data.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateColumnError,
    EmptyColumnError,
    LoadError,
    SchemaError,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, CATEGORICAL)

# integer-valued columns with at most this many distinct observed values are
# inferred as coded-categorical
MAX_INFERRED_CODES = 10


@dataclass(frozen=True, eq=False)
class MaskedTable:
    """Column-named numeric matrix with an observation mask.

    Parameters
    ----------
    column_names : sequence of str
        Pairwise distinct column identifiers.
    column_kinds : sequence of str
        ``"continuous"`` or ``"categorical"`` per column.
    values : ndarray, shape (n_rows, n_cols)
        Cell values.  Entries under ``mask == False`` are replaced by NaN.
    mask : ndarray of bool, same shape as ``values``
        ``True`` where the cell is observed.
    codes : mapping, optional
        Declared code set per categorical column.  Observed cells of those
        columns must belong to it.
    """

    column_names: tuple
    column_kinds: tuple
    values: np.ndarray
    mask: np.ndarray
    codes: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(str(c) for c in self.column_names)
        kinds = tuple(self.column_kinds)
        values = np.array(self.values, dtype=np.float64, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2:
            raise SchemaError(f"values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise SchemaError(f"mask shape {mask.shape} != values shape {values.shape}")
        if len(names) != values.shape[1]:
            raise SchemaError(f"{len(names)} column names for {values.shape[1]} columns")
        if len(kinds) != len(names):
            raise SchemaError("column_kinds must have one entry per column")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dup}")
        for k in kinds:
            if k not in KINDS:
                raise SchemaError(f"unknown column kind {k!r}")
        if not np.all(np.isfinite(values[mask])):
            bad = np.argwhere(mask & ~np.isfinite(values))[0]
            raise SchemaError(
                f"observed cell at row {bad[0]}, column {names[bad[1]]!r} is not finite"
            )
        values[~mask] = np.nan
        codes = {}
        for name, code_set in dict(self.codes).items():
            if name not in names:
                raise SchemaError(f"code set given for unknown column {name!r}")
            j = names.index(name)
            if kinds[j] != CATEGORICAL:
                raise SchemaError(f"code set given for continuous column {name!r}")
            code_set = tuple(sorted(float(c) for c in code_set))
            obs = values[mask[:, j], j]
            bad = ~np.isin(obs, code_set)
            if bad.any():
                raise SchemaError(
                    f"column {name!r} holds value {obs[bad][0]!r} outside its code set {code_set}"
                )
            codes[name] = code_set
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "column_kinds", kinds)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def from_array(cls, data, column_names=None, column_kinds=None, codes=None):
        """Build a table from an array where NaN marks a missing cell."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if column_names is None:
            column_names = [f"x{j}" for j in range(data.shape[1])]
        if column_kinds is None:
            column_kinds = [CONTINUOUS] * data.shape[1]
        return cls(tuple(column_names), tuple(column_kinds), data, ~np.isnan(data), codes or {})

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def index(self, column: str) -> int:
        try:
            return self.column_names.index(column)
        except ValueError:
            raise SchemaError(f"unknown column {column!r}") from None

    def kind(self, column: str) -> str:
        return self.column_kinds[self.index(column)]

    def observed(self, column: str) -> np.ndarray:
        """Observed values of one column, in row order."""
        j = self.index(column)
        return self.values[self.mask[:, j], j]

    def n_missing(self) -> np.ndarray:
        return (~self.mask).sum(axis=0)

    def has_holes(self) -> bool:
        return not bool(self.mask.all())

    def complete_rows(self) -> np.ndarray:
        return self.mask.all(axis=1)

    def to_array(self) -> np.ndarray:
        """Writable copy of the values with NaN at masked cells."""
        return np.array(self.values, copy=True)

    def replace(self, values=None, mask=None, codes=None) -> "MaskedTable":
        return MaskedTable(
            self.column_names,
            self.column_kinds,
            self.values if values is None else values,
            self.mask if mask is None else mask,
            self.codes if codes is None else codes,
        )

    def select_columns(self, columns: Sequence[str]) -> "MaskedTable":
        idx = [self.index(c) for c in columns]
        names = tuple(self.column_names[j] for j in idx)
        return MaskedTable(
            names,
            tuple(self.column_kinds[j] for j in idx),
            self.values[:, idx],
            self.mask[:, idx],
            {n: c for n, c in self.codes.items() if n in names},
        )

    def select_rows(self, rows) -> "MaskedTable":
        rows = np.asarray(rows)
        return MaskedTable(
            self.column_names, self.column_kinds, self.values[rows], self.mask[rows], self.codes
        )

    def equals(self, other: "MaskedTable") -> bool:
        """Exact equality of names, kinds, mask and observed values."""
        return (
            self.column_names == other.column_names
            and self.column_kinds == other.column_kinds
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )

    def __repr__(self):
        return (
            f"MaskedTable(n_rows={self.n_rows}, n_cols={self.n_cols}, "
            f"missing={int((~self.mask).sum())})"
        )


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------


def read_schema(path) -> dict:
    """Read a sidecar schema: ``{"columns": {name: {"kind": ..., "codes": [...]}}}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_schema(raw, origin=str(path))


def parse_schema(raw: Mapping, origin: str = "schema") -> dict:
    """Normalize a schema mapping to ``{name: {"kind", "codes"}}``."""
    cols = raw.get("columns", raw) if isinstance(raw, Mapping) else raw
    if not isinstance(cols, Mapping):
        raise SchemaError(f"{origin}: 'columns' must be an object")
    out = {}
    for name, entry in cols.items():
        if isinstance(entry, str):
            entry = {"kind": entry}
        if not isinstance(entry, Mapping):
            raise SchemaError(f"{origin}: column {name!r} entry must be an object")
        kind = entry.get("kind", CONTINUOUS)
        if kind not in KINDS:
            raise SchemaError(f"{origin}: column {name!r} has unknown kind {kind!r}")
        out[name] = {"kind": kind, "codes": entry.get("codes")}
    return out


def sidecar_schema_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.json")


def _infer_kind(values: np.ndarray, mask: np.ndarray) -> str:
    obs = values[mask]
    if obs.size == 0 or not np.all(obs == np.round(obs)):
        return CONTINUOUS
    if np.unique(obs).size <= MAX_INFERRED_CODES:
        return CATEGORICAL
    return CONTINUOUS


def load_csv(path, missing_token: str = "", schema=None) -> MaskedTable:
    """Load a header-first CSV file into a :class:`MaskedTable`.

    Cells equal to ``missing_token`` (after stripping whitespace) are masked.
    Column kinds come from ``schema`` (a path or an already parsed mapping),
    else from a sibling ``<stem>.schema.json`` if present, else inference.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"{path}: duplicate header names {dup}")
    body = [r for r in rows[1:] if r]
    n, m = len(body), len(header)
    values = np.full((n, m), np.nan)
    mask = np.zeros((n, m), dtype=bool)
    token = missing_token.strip()
    for i, rec in enumerate(body):
        if len(rec) != m:
            raise LoadError(f"{path}: expected {m} fields, found {len(rec)}", row=i + 1)
        for j, cell in enumerate(rec):
            cell = cell.strip()
            if cell == token:
                continue
            try:
                x = float(cell)
            except ValueError:
                raise LoadError(f"{path}: unparseable number {cell!r}", row=i + 1, column=header[j]) from None
            if not math.isfinite(x):
                raise LoadError(f"{path}: non-finite number {cell!r}", row=i + 1, column=header[j])
            values[i, j] = x
            mask[i, j] = True

    if schema is None:
        side = sidecar_schema_path(path)
        schema = read_schema(side) if side.exists() else {}
    elif isinstance(schema, Mapping):
        schema = parse_schema(schema)
    else:
        schema = read_schema(schema)

    kinds, codes = [], {}
    for j, name in enumerate(header):
        entry = schema.get(name)
        if entry is None:
            kinds.append(_infer_kind(values[:, j], mask[:, j]))
            continue
        kinds.append(entry["kind"])
        if entry["kind"] == CATEGORICAL and entry.get("codes") is not None:
            codes[name] = tuple(entry["codes"])
    return MaskedTable(tuple(header), tuple(kinds), values, mask, codes)


def format_number(x: float) -> str:
    """Shortest text that parses back to exactly ``x``."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def table_to_csv_text(t: MaskedTable, missing_token: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.column_names)
    for i in range(t.n_rows):
        w.writerow(
            format_number(t.values[i, j]) if t.mask[i, j] else missing_token
            for j in range(t.n_cols)
        )
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(t: MaskedTable, path, missing_token: str = "") -> None:
    atomic_write_text(path, table_to_csv_text(t, missing_token))


def schema_dict(t: MaskedTable) -> dict:
    cols = {}
    for name, kind in zip(t.column_names, t.column_kinds):
        entry = {"kind": kind}
        if name in t.codes:
            entry["codes"] = [int(c) if float(c).is_integer() else c for c in t.codes[name]]
        cols[name] = entry
    return {"columns": cols}


# ---------------------------------------------------------------------------
# Column statistics and standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    median: float
    mode: float
    std: float
    n_observed: int


def _sample_std(x: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    return float(np.std(x, ddof=1))


def column_stats(t: MaskedTable, col: str) -> ColumnStats:
    """Mean, median, mode and sample std over the observed cells of ``col``.

    The median of an even count is the midpoint of the middle pair; mode ties
    go to the smallest value.
    """
    obs = t.observed(col)
    if obs.size == 0:
        raise EmptyColumnError(f"column {col!r} has no observed cells")
    uniq, counts = np.unique(obs, return_counts=True)
    # np.unique sorts ascending, argmax picks the first maximum
    mode = float(uniq[np.argmax(counts)])
    return ColumnStats(
        mean=float(np.mean(obs)),
        median=float(np.median(obs)),
        mode=mode,
        std=_sample_std(obs),
        n_observed=int(obs.size),
    )


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    column_names: tuple
    center: np.ndarray
    scale: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.center) / self.scale

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.center

    def to_dict(self) -> dict:
        return {
            "columns": list(self.column_names),
            "center": [float(c) for c in self.center],
            "scale": [float(s) for s in self.scale],
        }


def standardization_params(t: MaskedTable, allow_degenerate: bool = False) -> StandardizationParams:
    """Observed mean and sample std per column.

    Columns without variance raise :class:`DegenerateColumnError` when they
    are continuous.  With ``allow_degenerate`` (and always for categorical
    columns) such columns are only centered.
    """
    center = np.zeros(t.n_cols)
    scale = np.ones(t.n_cols)
    for j, name in enumerate(t.column_names):
        obs = t.values[t.mask[:, j], j]
        if obs.size == 0:
            if allow_degenerate:
                continue
            raise EmptyColumnError(f"column {name!r} has no observed cells")
        center[j] = np.mean(obs)
        s = _sample_std(obs)
        if s > 0:
            scale[j] = s
        elif t.column_kinds[j] == CONTINUOUS and not allow_degenerate:
            raise DegenerateColumnError(f"column {name!r} has zero variance")
    return StandardizationParams(t.column_names, center, scale)


def standardize(t: MaskedTable, allow_degenerate: bool = False):
    """Return ``(standardized table, params)``; the mask is unchanged."""
    params = standardization_params(t, allow_degenerate=allow_degenerate)
    z = params.apply(t.values)
    kinds = tuple(CONTINUOUS for _ in t.column_kinds)
    return MaskedTable(t.column_names, kinds, z, t.mask), params


def destandardize(t: MaskedTable, params: StandardizationParams, like: Optional[MaskedTable] = None):
    """Invert :func:`standardize`.  ``like`` restores kinds and code sets."""
    if tuple(params.column_names) != t.column_names:
        raise SchemaError("standardization params do not match table columns")
    x = params.invert(t.values)
    if like is None:
        return MaskedTable(t.column_names, t.column_kinds, x, t.mask)
    return MaskedTable(like.column_names, like.column_kinds, x, t.mask, like.codes)
