"""Ordinary least squares, train/test splitting and squared-error scores."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, PreconditionError, RankDeficiencyError, SchemaError, ScoringError, SplitError

INTERCEPT = "(intercept)"


@dataclass(frozen=True, eq=False)
class OlsModel:
    predictor_names: tuple
    coefficients: np.ndarray
    intercept: float
    rss: float
    n: int
    p: int

    def to_dict(self) -> dict:
        return {
            "predictors": list(self.predictor_names),
            "coefficients": [float(b) for b in self.coefficients],
            "intercept": float(self.intercept),
            "diagnostics": {"rss": float(self.rss), "n": int(self.n), "p": int(self.p)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OlsModel":
        try:
            names = tuple(d["predictors"])
            coef = np.asarray(d["coefficients"], dtype=np.float64)
            diag = d.get("diagnostics", {})
            model = cls(names, coef, float(d["intercept"]), float(diag.get("rss", math.nan)),
                        int(diag.get("n", 0)), int(diag.get("p", len(names))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model document: {exc}") from None
        if coef.shape != (len(names),):
            raise ConfigError("model has a coefficient count different from its predictor count")
        return model


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise SchemaError(f"design matrix must be 2-D, got shape {X.shape}")
    return X


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def fit_ols(X, y, predictor_names: Optional[Sequence[str]] = None) -> OlsModel:
    """Least-squares fit of ``y`` on ``X`` plus an intercept.

    Solved through a column-pivoted Householder QR factorization of the
    augmented design.  A numerically rank-deficient design raises
    :class:`RankDeficiencyError` naming a dependent column.
    """
    X = _design(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if y.shape[0] != n:
        raise SchemaError(f"X has {n} rows but y has {y.shape[0]}")
    if n <= p + 1:
        raise PreconditionError(f"need more than {p + 1} rows to fit {p} predictors, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise PreconditionError("design and response must be finite")
    names = tuple(predictor_names) if predictor_names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise SchemaError(f"{len(names)} predictor names for {p} columns")

    A = _augment(X)
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(np.float64).eps * diag[0]
    small = np.nonzero(diag <= tol)[0]
    if small.size:
        col = int(piv[small[0]])
        raise RankDeficiencyError(INTERCEPT if col == 0 else names[col - 1])
    beta_piv = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p + 1)
    beta[piv] = beta_piv
    resid = y - A @ beta
    return OlsModel(names, beta[1:].copy(), float(beta[0]), float(resid @ resid), n, p)


def fit_ridge(X, y, eps: float, predictor_names: Optional[Sequence[str]] = None) -> OlsModel:
    """Least squares with ``eps`` added to the normal-matrix diagonal of the slopes.

    Solved as an augmented least-squares problem, so the normal matrix is
    never formed.  The intercept is not penalized.
    """
    X = _design(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    names = tuple(predictor_names) if predictor_names is not None else tuple(f"x{j}" for j in range(p))
    A = np.vstack([_augment(X), np.hstack([np.zeros((p, 1)), math.sqrt(eps) * np.eye(p)])])
    b = np.concatenate([y, np.zeros(p)])
    Q, R = np.linalg.qr(A)
    beta = linalg.solve_triangular(R, Q.T @ b)
    resid = y - _augment(X) @ beta
    return OlsModel(names, beta[1:].copy(), float(beta[0]), float(resid @ resid), n, p)


def predict(m: OlsModel, X) -> np.ndarray:
    """``intercept + X @ coefficients``."""
    X = _design(X)
    if X.shape[1] != len(m.coefficients):
        raise SchemaError(f"model expects {len(m.coefficients)} predictors, got {X.shape[1]}")
    return m.intercept + X @ m.coefficients


def predict_table(m: OlsModel, t) -> np.ndarray:
    """Predict from the named predictor columns of a fully observed table."""
    missing = [c for c in m.predictor_names if c not in t.column_names]
    if missing:
        raise SchemaError(f"table lacks predictor columns {missing}")
    sub = t.select_columns(m.predictor_names)
    if sub.has_holes():
        raise PreconditionError("predictor columns contain missing cells")
    return predict(m, sub.values)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < float(self.train_fraction) < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")

    def to_dict(self):
        return {"train_fraction": float(self.train_fraction), "seed": int(self.seed)}


MIN_SPLIT_ROWS = 10


def _key_hash(seed: int, key) -> int:
    digest = hashlib.blake2b(f"{int(seed)}|{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def n_train_rows(n: int, train_fraction: float) -> int:
    """``round(train_fraction * n)`` with halves rounded up, in exact arithmetic."""
    exact = Fraction(str(train_fraction)) * n
    return math.floor(exact + Fraction(1, 2))


def train_test_split(t, spec: SplitSpec, keys: Optional[Sequence] = None):
    """Seeded partition of rows into ``(train_rows, test_rows)``.

    Each row key is hashed together with the seed and rows are ranked by the
    hash, so the partition of keys does not depend on input row order.
    ``t`` may be a table or a row count; ``keys`` default to row indices.
    Returned index arrays are sorted.
    """
    n = t if isinstance(t, (int, np.integer)) else t.n_rows
    if n < MIN_SPLIT_ROWS:
        raise SplitError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {n}")
    keys = list(range(n)) if keys is None else list(keys)
    if len(keys) != n:
        raise SplitError(f"{len(keys)} keys for {n} rows")
    if len(set(map(str, keys))) != n:
        raise SplitError("row keys must be unique")
    order = sorted(range(n), key=lambda i: (_key_hash(spec.seed, keys[i]), str(keys[i])))
    k = n_train_rows(n, spec.train_fraction)
    train = np.sort(np.asarray(order[:k], dtype=np.int64))
    test = np.sort(np.asarray(order[k:], dtype=np.int64))
    return train, test


def _score_inputs(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or a.shape != b.shape:
        raise ScoringError(f"need equal non-empty lengths, got {a.size} and {b.size}")
    return a, b


def mse(a, b) -> float:
    a, b = _score_inputs(a, b)
    d = a - b
    return float(np.mean(d * d))


def rmse(a, b) -> float:
    return math.sqrt(mse(a, b))
