"""Seeded simulation of MCAR, MAR and MNAR missingness.

Each target cell receives exactly one uniform draw from a Philox
counter-based generator keyed by the spec's seed, in row-major order over
``(row, target column)``.  The cell is deleted when its draw falls below the
row's deletion probability, so a fixed seed reproduces the same mask on any
platform.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, MissingCovariateError, PreconditionError, SchemaError
from .table import MaskedTable, format_number

MCAR = "MCAR"
MAR = "MAR"
MNAR = "MNAR"
MECHANISMS = (MCAR, MAR, MNAR)

EQUALS = "equals"
GREATER_THAN = "greater_than"

MAX_SEED = 2**64


@dataclass(frozen=True)
class Condition:
    """Row predicate over a single covariate: ``x == value`` or ``x > value``."""

    op: str
    value: float

    def __post_init__(self):
        if self.op not in (EQUALS, GREATER_THAN):
            raise ConfigError(f"condition op must be {EQUALS!r} or {GREATER_THAN!r}, got {self.op!r}")
        object.__setattr__(self, "value", float(self.value))

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.op == EQUALS:
            return x == self.value
        return x > self.value

    def to_dict(self):
        return {"op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "op" not in d or "value" not in d:
            raise ConfigError(f"condition must be an object with 'op' and 'value', got {d!r}")
        return cls(d["op"], d["value"])


def Equals(value) -> Condition:
    return Condition(EQUALS, value)


def GreaterThan(value) -> Condition:
    return Condition(GREATER_THAN, value)


@dataclass(frozen=True)
class MissingnessSpec:
    """Parameters of one missingness simulation.

    Rows satisfying ``condition`` lose their target cell with probability
    ``min(amplification * base_rate, 1)``; all other rows (and every row
    under MCAR) with probability ``base_rate``.
    """

    mechanism: str
    target_columns: tuple
    base_rate: float
    condition: Optional[Condition] = None
    condition_source: Optional[str] = None
    amplification: float = 2.0
    seed: int = 0

    def __post_init__(self):
        mech = str(self.mechanism).upper()
        if mech not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        object.__setattr__(self, "mechanism", mech)
        targets = (self.target_columns,) if isinstance(self.target_columns, str) else tuple(self.target_columns)
        if not targets:
            raise ConfigError("target_columns must not be empty")
        if len(set(targets)) != len(targets):
            raise ConfigError("target_columns must be distinct")
        object.__setattr__(self, "target_columns", targets)
        p = float(self.base_rate)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"base_rate must lie in [0, 1], got {p}")
        object.__setattr__(self, "base_rate", p)
        a = float(self.amplification)
        if not a >= 0.0:
            raise ConfigError(f"amplification must be >= 0, got {a}")
        object.__setattr__(self, "amplification", a)
        seed = int(self.seed)
        if not 0 <= seed < MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        object.__setattr__(self, "seed", seed)
        if mech == MCAR:
            if self.condition is not None or self.condition_source is not None:
                raise ConfigError("MCAR takes no condition")
        else:
            if self.condition is None or self.condition_source is None:
                raise ConfigError(f"{mech} requires condition and condition_source")
            if len(targets) != 1:
                raise ConfigError(f"{mech} targets exactly one column, got {len(targets)}")
            if mech == MAR and self.condition_source in targets:
                raise ConfigError("MAR condition_source must differ from the target column")

    def with_seed(self, seed: int) -> "MissingnessSpec":
        return MissingnessSpec(
            self.mechanism,
            self.target_columns,
            self.base_rate,
            self.condition,
            self.condition_source,
            self.amplification,
            seed,
        )

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "target_columns": list(self.target_columns),
            "base_rate": self.base_rate,
            "condition": None if self.condition is None else self.condition.to_dict(),
            "condition_source": self.condition_source,
            "amplification": self.amplification,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MissingnessSpec":
        known = {
            "mechanism", "target_columns", "base_rate", "condition",
            "condition_source", "amplification", "seed",
        }
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown missingness fields: {sorted(extra)}")
        for key in ("mechanism", "target_columns", "base_rate"):
            if key not in d:
                raise ConfigError(f"missingness spec lacks field {key!r}")
        cond = d.get("condition")
        return cls(
            mechanism=d["mechanism"],
            target_columns=d["target_columns"],
            base_rate=d["base_rate"],
            condition=None if cond is None else Condition.from_dict(cond),
            condition_source=d.get("condition_source"),
            amplification=d.get("amplification", 2.0),
            seed=d.get("seed", 0),
        )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Cells deleted by a simulation, with their original values."""

    rows: np.ndarray
    columns: tuple
    values: np.ndarray
    source_spec: Optional[MissingnessSpec] = None

    def __len__(self):
        return len(self.rows)

    @property
    def entries(self) -> list:
        return [(int(r), c, float(v)) for r, c, v in zip(self.rows, self.columns, self.values)]

    def restore(self, t: MaskedTable) -> MaskedTable:
        """Re-insert the true values into ``t``."""
        values = t.to_array()
        mask = np.array(t.mask, copy=True)
        for r, c, v in zip(self.rows, self.columns, self.values):
            j = t.index(c)
            values[r, j] = v
            mask[r, j] = True
        return t.replace(values=values, mask=mask)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "column", "value"])
        for r, c, v in zip(self.rows, self.columns, self.values):
            w.writerow([int(r), c, format_number(v)])
        return buf.getvalue()


def deletion_probability(spec: MissingnessSpec, row_condition) -> float:
    """Deletion probability of a target cell given whether its row meets the condition."""
    if spec.mechanism == MCAR or not row_condition:
        return spec.base_rate
    return min(spec.amplification * spec.base_rate, 1.0)


def base_rate_for_fraction(fraction: float, prevalence: float, amplification: float) -> float:
    """Base rate giving an expected overall deletion fraction.

    Solves ``(1 - q) p + q min(a p, 1) = fraction`` for ``p``, where ``q`` is
    the share of rows meeting the condition.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"expected fraction must lie in [0, 1], got {fraction}")
    q, a = float(prevalence), float(amplification)
    p = fraction / (1.0 - q + a * q) if (1.0 - q + a * q) > 0 else fraction
    if a * p > 1.0 and q < 1.0:
        # condition-true rows saturate at probability 1
        p = (fraction - q) / (1.0 - q)
    return float(min(max(p, 0.0), 1.0))


def condition_indicator(
    t: MaskedTable, spec: MissingnessSpec, covariate: Optional[Sequence[float]] = None
) -> np.ndarray:
    """Boolean vector marking rows that satisfy the spec's condition."""
    if spec.mechanism == MCAR:
        return np.zeros(t.n_rows, dtype=bool)
    if spec.mechanism == MAR:
        if spec.condition_source not in t.column_names:
            raise SchemaError(f"MAR condition_source {spec.condition_source!r} is not a column of the table")
        j = t.index(spec.condition_source)
        if not t.mask[:, j].all():
            raise PreconditionError(f"conditioning column {spec.condition_source!r} has missing cells")
        return spec.condition.evaluate(t.values[:, j])
    if covariate is None:
        raise MissingCovariateError(
            f"MNAR needs the external covariate {spec.condition_source!r}"
        )
    if spec.condition_source in t.column_names:
        raise ConfigError(
            f"MNAR condition_source {spec.condition_source!r} must not be a column of the table"
        )
    cov = np.asarray(covariate, dtype=np.float64)
    if cov.shape != (t.n_rows,):
        raise PreconditionError(f"covariate has shape {cov.shape}, expected ({t.n_rows},)")
    if not np.all(np.isfinite(cov)):
        raise PreconditionError("covariate contains missing or non-finite values")
    return spec.condition.evaluate(cov)


def uniform_draws(seed: int, n_rows: int, n_targets: int) -> np.ndarray:
    """One uniform in [0, 1) per target cell, row-major, from Philox keyed by ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    return gen.random((n_rows, n_targets))


def apply_missingness(t: MaskedTable, spec: MissingnessSpec, covariate=None):
    """Delete target cells according to ``spec``.

    Returns ``(punctured table, GroundTruth)``.  Non-target columns are
    untouched and the output mask is a subset of the input mask.
    """
    for c in spec.target_columns:
        j = t.index(c)
        if not t.mask[:, j].all():
            raise PreconditionError(f"target column {c!r} already has missing cells")
    cond = condition_indicator(t, spec, covariate)
    p = spec.base_rate
    p_hi = min(spec.amplification * p, 1.0) if spec.mechanism != MCAR else p
    row_prob = np.where(cond, p_hi, p)

    cols = [t.index(c) for c in spec.target_columns]
    u = uniform_draws(spec.seed, t.n_rows, len(cols))
    delete = u < row_prob[:, None]

    mask = np.array(t.mask, copy=True)
    mask[:, cols] &= ~delete
    rr, kk = np.nonzero(delete)  # row-major order
    truth = GroundTruth(
        rows=rr.astype(np.int64),
        columns=tuple(spec.target_columns[k] for k in kk),
        values=t.values[rr, np.asarray(cols, dtype=np.int64)[kk]] if rr.size else np.zeros(0),
        source_spec=spec,
    )
    return t.replace(mask=mask), truth
