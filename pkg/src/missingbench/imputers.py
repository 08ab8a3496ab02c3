"""The six imputation methods behind one interface.

Every imputer fills all masked cells of a table and returns an
:class:`ImputationResult`.  KNN, low-rank and regression imputation work on
standardized columns; fills are mapped back to the original scale and
observed cells are copied through untouched.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .errors import (
    ConfigError,
    EmptyColumnError,
    HoldoutError,
    ImputationError,
    IsolatedRowError,
    RankDeficiencyError,
)
from .regression import fit_ols, fit_ridge, predict
from .table import MaskedTable, column_stats, format_number, standardization_params

AUTO = "auto"


@dataclass(frozen=True)
class Mean:
    method = "mean"


@dataclass(frozen=True)
class Median:
    method = "median"


@dataclass(frozen=True)
class MostFrequent:
    method = "most_frequent"


@dataclass(frozen=True)
class Knn:
    k: int = 5
    method = "knn"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"knn k must be a positive integer, got {self.k!r}")


@dataclass(frozen=True)
class LowRank:
    """Hard-impute settings.  ``rank="auto"`` selects the rank on held-out cells."""

    rank: Union[int, str] = AUTO
    max_iter: int = 100
    tol: float = 1e-5
    holdout_fraction: float = 0.2
    max_rank: int = 10
    seed: int = 0
    method = "lowrank"

    def __post_init__(self):
        if self.rank != AUTO and (not isinstance(self.rank, (int, np.integer)) or self.rank < 1):
            raise ConfigError(f"lowrank rank must be a positive integer or 'auto', got {self.rank!r}")
        if self.max_iter < 1:
            raise ConfigError("lowrank max_iter must be >= 1")
        if not self.tol > 0:
            raise ConfigError("lowrank tol must be > 0")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("lowrank holdout_fraction must lie in (0, 1)")
        if self.max_rank < 1:
            raise ConfigError("lowrank max_rank must be >= 1")


@dataclass(frozen=True)
class IterativeRegression:
    max_iter: int = 10
    tol: float = 1e-4
    ridge_eps: float = 1e-8
    method = "regression"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("regression max_iter must be >= 1")
        if not self.tol > 0:
            raise ConfigError("regression tol must be > 0")
        if not self.ridge_eps > 0:
            raise ConfigError("regression ridge_eps must be > 0")


ImputerConfig = Union[Mean, Median, MostFrequent, Knn, LowRank, IterativeRegression]

_CONFIG_TYPES = {c.method: c for c in (Mean, Median, MostFrequent, Knn, LowRank, IterativeRegression)}
METHODS = tuple(_CONFIG_TYPES)


def imputer_to_dict(cfg: ImputerConfig) -> dict:
    return {"method": cfg.method, **asdict(cfg)}


def imputer_from_dict(d) -> ImputerConfig:
    if isinstance(d, str):
        d = {"method": d}
    d = dict(d)
    method = d.pop("method", None)
    if method not in _CONFIG_TYPES:
        raise ConfigError(f"unknown imputation method {method!r}; expected one of {METHODS}")
    try:
        return _CONFIG_TYPES[method](**d)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {method}: {exc}") from None


@dataclass(frozen=True, eq=False)
class ImputationResult:
    table: MaskedTable
    filled_rows: np.ndarray
    filled_columns: tuple
    filled_values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def filled(self) -> list:
        return [
            (int(r), c, float(v))
            for r, c, v in zip(self.filled_rows, self.filled_columns, self.filled_values)
        ]

    def filled_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "column", "value"])
        for r, c, v in zip(self.filled_rows, self.filled_columns, self.filled_values):
            w.writerow([int(r), c, format_number(v)])
        return buf.getvalue()


def _require_observed(t: MaskedTable):
    for j, name in enumerate(t.column_names):
        if not t.mask[:, j].any() and t.n_rows > 0:
            raise EmptyColumnError(f"column {name!r} has no observed cells")


def _finish(t: MaskedTable, completed: np.ndarray, diagnostics: dict) -> ImputationResult:
    """Assemble the result; observed cells are taken from ``t`` verbatim."""
    holes = ~t.mask
    out = np.where(t.mask, t.values, completed)
    if not np.all(np.isfinite(out)):
        raise ImputationError("imputation produced non-finite values")
    rr, cc = np.nonzero(holes)
    filled_cols = {t.column_names[j] for j in np.unique(cc)}
    # imputed codes are left continuous, so filled columns lose their code set
    codes = {n: c for n, c in t.codes.items() if n not in filled_cols}
    table = MaskedTable(t.column_names, t.column_kinds, out, np.ones_like(t.mask), codes)
    return ImputationResult(
        table=table,
        filled_rows=rr.astype(np.int64),
        filled_columns=tuple(t.column_names[j] for j in cc),
        filled_values=out[rr, cc],
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# univariate
# ---------------------------------------------------------------------------


def impute_univariate(t: MaskedTable, kind: str) -> ImputationResult:
    """Fill each column's holes with its observed mean, median or most frequent value."""
    attr = {"mean": "mean", "median": "median", "most_frequent": "mode"}.get(kind)
    if attr is None:
        raise ConfigError(f"univariate kind must be mean, median or most_frequent, got {kind!r}")
    completed = t.to_array()
    fills = {}
    for j, name in enumerate(t.column_names):
        holes = ~t.mask[:, j]
        if not holes.any():
            continue
        value = getattr(column_stats(t, name), attr)
        completed[holes, j] = value
        fills[name] = value
    return _finish(t, completed, {"method": kind, "fill_values": fills})


# ---------------------------------------------------------------------------
# nearest neighbours
# ---------------------------------------------------------------------------

_KNN_CHUNK = 128


def partial_distances(z: np.ndarray, mask: np.ndarray, rows: np.ndarray, donors: np.ndarray):
    """Rescaled Euclidean distance over mutually observed coordinates.

    Returns ``(dist, n_shared)`` with shape ``(len(rows), len(donors))``;
    ``dist = sqrt(sum_shared (a - b)^2 * n_cols / n_shared)`` and is ``inf``
    where no coordinate is shared.
    """
    z0 = np.where(mask, z, 0.0)
    n_cols = z.shape[1]
    a, am = z0[rows][:, None, :], mask[rows][:, None, :]
    b, bm = z0[donors][None, :, :], mask[donors][None, :, :]
    shared = am & bm
    diff = np.where(shared, a - b, 0.0)
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    n_shared = shared.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(d2 * n_cols / n_shared)
    dist[n_shared == 0] = np.inf
    return dist, n_shared


def impute_knn(t: MaskedTable, k: int = 5) -> ImputationResult:
    """Fill each hole with the unweighted mean of its ``k`` nearest donors.

    Donors for a hole in column ``c`` are rows observing ``c`` that share at
    least one observed coordinate with the hole's row.  Distance ties go to
    the lower row index.
    """
    cfg = Knn(k)
    _require_observed(t)
    params = standardization_params(t, allow_degenerate=True)
    z = np.where(t.mask, params.apply(np.where(t.mask, t.values, 0.0)), 0.0)
    completed = t.to_array()
    n_donors_used = []
    for j, name in enumerate(t.column_names):
        hole_rows = np.nonzero(~t.mask[:, j])[0]
        if hole_rows.size == 0:
            continue
        donors = np.nonzero(t.mask[:, j])[0]
        donor_vals = t.values[donors, j]
        for start in range(0, hole_rows.size, _KNN_CHUNK):
            chunk = hole_rows[start:start + _KNN_CHUNK]
            dist, _ = partial_distances(z, t.mask, chunk, donors)
            for i, r in enumerate(chunk):
                d = dist[i]
                ok = np.isfinite(d)
                if not ok.any():
                    raise IsolatedRowError(int(r), name)
                cand = np.nonzero(ok)[0]
                # lexsort: last key is primary; donors are in ascending row order
                order = cand[np.lexsort((donors[cand], d[cand]))][: cfg.k]
                completed[r, j] = donor_vals[order].mean()
                n_donors_used.append(order.size)
    diag = {"method": "knn", "k": cfg.k}
    if n_donors_used:
        diag["min_donors"] = int(min(n_donors_used))
    return _finish(t, completed, diag)


# ---------------------------------------------------------------------------
# low-rank (hard impute)
# ---------------------------------------------------------------------------


def _hard_impute(z: np.ndarray, holes: np.ndarray, rank: int, max_iter: int, tol: float):
    """Alternate a column-centered rank-``rank`` SVD fit with refilling the holes.

    ``z`` must already hold starting values at the holes.  Returns the filled
    matrix and a diagnostics dict.  The squared fit error on observed cells
    is recorded per iteration and is non-increasing.
    """
    x = np.array(z, copy=True)
    obs = ~holes
    trace = []
    change = 0.0
    it = 0
    converged = True
    if holes.any():
        converged = False
        for it in range(1, max_iter + 1):
            mu = x.mean(axis=0)
            u, s, vt = np.linalg.svd(x - mu, full_matrices=False)
            approx = (u[:, :rank] * s[:rank]) @ vt[:rank] + mu
            resid = (z - approx)[obs]
            trace.append(float(resid @ resid))
            new = approx[holes]
            step = new - x[holes]
            change = float(math.sqrt(np.mean(step * step)))
            x[holes] = new
            if change < tol:
                converged = True
                break
    return x, {
        "iterations": it,
        "final_change": change,
        "converged": converged,
        "objective_trace": trace,
    }


def _standardized(t: MaskedTable):
    params = standardization_params(t, allow_degenerate=True)
    z = np.where(t.mask, params.apply(np.where(t.mask, t.values, 0.0)), 0.0)
    return z, params


def _check_rank(t: MaskedTable, rank: int):
    limit = min(t.n_rows, t.n_cols)
    if rank > limit:
        raise ConfigError(f"rank {rank} exceeds min(n_rows, n_cols) = {limit}")


def rank_candidates(t: MaskedTable, cfg: LowRank) -> list:
    return list(range(1, min(t.n_rows, t.n_cols, cfg.max_rank) + 1))


def select_rank(t: MaskedTable, cfg: LowRank = LowRank()):
    """Choose the hard-impute rank by error on held-out observed cells.

    A ``holdout_fraction`` share of the observed cells in the columns that
    have holes is masked (seeded by ``cfg.seed``).  Each candidate rank is
    scored by RMSE on those cells in standardized units.  The smallest rank
    whose error is within ``cfg.tol`` of the minimum wins.

    Returns ``(rank, {rank: rmse})``.
    """
    _require_observed(t)
    candidates = rank_candidates(t, cfg)
    if len(candidates) == 1:
        return candidates[0], {}
    holed_cols = np.nonzero((~t.mask).any(axis=0))[0]
    pool_mask = np.zeros_like(t.mask)
    pool_mask[:, holed_cols] = t.mask[:, holed_cols]
    pool = np.flatnonzero(pool_mask)
    if pool.size < 10:
        raise HoldoutError(f"need at least 10 observed cells in holed columns for a holdout, got {pool.size}")
    n_hold = max(1, int(round(cfg.holdout_fraction * pool.size)))
    gen = np.random.Generator(np.random.Philox(key=int(cfg.seed)))
    chosen = np.sort(gen.choice(pool, size=n_hold, replace=False))
    held = np.zeros(t.mask.size, dtype=bool)
    held[chosen] = True
    held = held.reshape(t.mask.shape)

    train = t.replace(mask=t.mask & ~held)
    _require_observed(train)
    z, params = _standardized(train)
    truth = params.apply(np.where(held, t.values, 0.0))[held]
    holes = ~train.mask
    errors = {}
    for r in candidates:
        filled, _ = _hard_impute(z, holes, r, cfg.max_iter, cfg.tol)
        d = filled[held] - truth
        errors[r] = float(math.sqrt(np.mean(d * d)))
    best = min(errors.values())
    rank = min(r for r, e in errors.items() if e <= best + cfg.tol)
    return rank, errors


def impute_low_rank(t: MaskedTable, cfg: LowRank = LowRank()) -> ImputationResult:
    """Iterative truncated-SVD completion (hard impute).

    Holes start at the column means; each iteration refits a rank-``r``
    approximation of the column-centered filled matrix and overwrites only
    the holes, until the RMS change over the holes drops below ``cfg.tol``.
    Non-convergence is reported in the diagnostics, not raised.
    """
    _require_observed(t)
    diag = {"method": "lowrank"}
    if cfg.rank == AUTO and not t.has_holes():
        # nothing to fill, so no rank to choose
        rank = 1
    elif cfg.rank == AUTO:
        rank, errors = select_rank(t, cfg)
        diag["selected_rank"] = rank
        diag["rank_errors"] = {str(r): e for r, e in errors.items()}
    else:
        rank = int(cfg.rank)
        _check_rank(t, rank)
    diag["rank"] = rank
    z, params = _standardized(t)
    filled, info = _hard_impute(z, ~t.mask, rank, cfg.max_iter, cfg.tol)
    diag.update(info)
    return _finish(t, params.invert(filled), diag)


# ---------------------------------------------------------------------------
# round-robin regression
# ---------------------------------------------------------------------------


def impute_iterative_regression(
    t: MaskedTable, cfg: IterativeRegression = IterativeRegression()
) -> ImputationResult:
    """Round-robin OLS imputation.

    Holes start at the column means.  Each sweep visits the columns with
    holes in ascending order of hole count, regresses the column on all
    other columns over its originally observed rows and overwrites its holes
    with the predictions.  Sweeps stop when the largest change at any hole
    (standardized units) is below ``cfg.tol``.  Columns with too few observed
    rows to fit keep their mean fill; rank-deficient fits fall back to a
    ridge solve with ``cfg.ridge_eps``.
    """
    _require_observed(t)
    z, params = _standardized(t)
    holes = ~t.mask
    n_cols = t.n_cols
    counts = holes.sum(axis=0)
    order = [j for j in sorted(range(n_cols), key=lambda j: (counts[j], j)) if counts[j] > 0]

    fallback = [t.column_names[j] for j in order if n_cols < 2 or t.mask[:, j].sum() <= n_cols]
    fit_cols = [j for j in order if t.column_names[j] not in fallback]
    ridge_cols = set()
    sweeps = 0
    change = 0.0
    converged = not fit_cols
    for sweeps in range(1, cfg.max_iter + 1) if fit_cols else ():
        change = 0.0
        for j in fit_cols:
            others = [k for k in range(n_cols) if k != j]
            obs = t.mask[:, j]
            X, y = z[obs][:, others], z[obs, j]
            try:
                model = fit_ols(X, y)
            except RankDeficiencyError:
                model = fit_ridge(X, y, cfg.ridge_eps)
                ridge_cols.add(t.column_names[j])
            hole_rows = holes[:, j]
            pred = predict(model, z[hole_rows][:, others])
            change = max(change, float(np.max(np.abs(pred - z[hole_rows, j]))))
            z[hole_rows, j] = pred
        if change < cfg.tol:
            converged = True
            break
    diag = {
        "method": "regression",
        "iterations": sweeps,
        "final_change": change,
        "converged": converged,
        "visit_order": [t.column_names[j] for j in fit_cols],
        "fallback_columns": fallback,
        "ridge_columns": sorted(ridge_cols),
    }
    return _finish(t, params.invert(z), diag)


def impute(t: MaskedTable, cfg: ImputerConfig) -> ImputationResult:
    """Dispatch to the imputer named by ``cfg``."""
    if isinstance(cfg, (Mean, Median, MostFrequent)):
        return impute_univariate(t, cfg.method)
    if isinstance(cfg, Knn):
        return impute_knn(t, cfg.k)
    if isinstance(cfg, LowRank):
        return impute_low_rank(t, cfg)
    if isinstance(cfg, IterativeRegression):
        return impute_iterative_regression(t, cfg)
    raise ConfigError(f"not an imputer config: {cfg!r}")
