"""Exploratory diagnostics: pairwise correlation and missingness summaries."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import DegenerateTableError, SchemaError
from .table import MaskedTable


def pearson_correlation_matrix(t: MaskedTable) -> np.ndarray:
    """Pairwise-complete Pearson correlation matrix.

    Entry ``(i, j)`` uses only rows where both columns are observed.  Pairs
    with fewer than two shared rows or zero variance on those rows are NaN.
    """
    m = t.n_cols
    out = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i, m):
            both = t.mask[:, i] & t.mask[:, j]
            if both.sum() < 2:
                continue
            x = t.values[both, i]
            y = t.values[both, j]
            dx = x - x.mean()
            dy = y - y.mean()
            sxx = dx @ dx
            syy = dy @ dy
            denom = np.sqrt(sxx) * np.sqrt(syy)
            if not denom > 0:
                continue
            if i == j:
                r = 1.0
            else:
                r = float(np.clip((dx @ dy) / denom, -1.0, 1.0))
            out[i, j] = out[j, i] = r
    return out


class ChiSquaredResult(NamedTuple):
    statistic: float
    dof: int
    p_value: float
    table: tuple


def _as_binary(v, name):
    v = np.asarray(v)
    if v.dtype != bool:
        levels = np.unique(v)
        if not np.all(np.isin(levels, (0, 1))):
            raise SchemaError(f"{name} must be binary (0/1 or bool), got levels {levels[:5]}")
        v = v.astype(bool)
    if v.ndim != 1:
        raise SchemaError(f"{name} must be one-dimensional")
    return v


def chi_squared_independence(a, b) -> ChiSquaredResult:
    """Pearson chi-squared test (no continuity correction) on a 2x2 table.

    Both inputs are binary vectors of equal length, each with both levels
    present.  The statistic uses the closed form
    ``n (ad - bc)^2 / (r1 r2 c1 c2)`` in exact integer arithmetic, which makes
    it exactly symmetric in its two arguments.
    """
    a = _as_binary(a, "a")
    b = _as_binary(b, "b")
    if a.shape != b.shape:
        raise SchemaError(f"length mismatch: {a.size} vs {b.size}")
    for name, v in (("a", a), ("b", b)):
        if v.all() or not v.any():
            raise DegenerateTableError(f"vector {name} has a single level")
    n11 = int(np.sum(a & b))
    n10 = int(np.sum(a & ~b))
    n01 = int(np.sum(~a & b))
    n00 = int(np.sum(~a & ~b))
    n = n11 + n10 + n01 + n00
    num = n * (n11 * n00 - n10 * n01) ** 2
    den = (n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)
    statistic = num / den
    p = float(stats.chi2.sf(statistic, 1))
    return ChiSquaredResult(float(statistic), 1, p, ((n11, n10), (n01, n00)))


def missingness_summary(t: MaskedTable) -> list:
    """Per-column ``(name, n_missing, fraction_missing)`` rows."""
    miss = t.n_missing()
    n = max(t.n_rows, 1)
    return [(name, int(k), float(k) / n) for name, k in zip(t.column_names, miss)]


def co_missingness(t: MaskedTable) -> np.ndarray:
    """Count of rows in which both columns ``i`` and ``j`` are missing."""
    h = (~t.mask).astype(np.int64)
    return h.T @ h
