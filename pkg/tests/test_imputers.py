import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mcar_holes, rank_k_matrix
from missingbench.errors import ConfigError, EmptyColumnError, HoldoutError, IsolatedRowError
from missingbench.imputers import (
    IterativeRegression,
    Knn,
    LowRank,
    Mean,
    Median,
    MostFrequent,
    impute,
    impute_iterative_regression,
    impute_knn,
    impute_low_rank,
    impute_univariate,
    imputer_from_dict,
    imputer_to_dict,
    select_rank,
)
from missingbench.table import MaskedTable


def T(x, names=None):
    return MaskedTable.from_array(np.asarray(x, dtype=float), names)


def standardized(x):
    mu = np.nanmean(x, axis=0)
    sd = np.nanstd(x, axis=0, ddof=1)
    return (x - mu) / sd


def test_univariate_examples():
    t = T([1.0, 2.0, 3.0, np.nan])
    assert impute_univariate(t, "mean").table.values[3, 0] == 2.0
    assert impute_univariate(t, "median").table.values[3, 0] == 2.0
    assert impute_univariate(T([5.0, 5.0, 9.0, np.nan]), "most_frequent").table.values[3, 0] == 5.0
    with pytest.raises(EmptyColumnError):
        impute_univariate(T([[1.0, np.nan], [2.0, np.nan]]), "mean")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.data())
def test_mean_imputation_keeps_mean_and_shrinks_variance(values, data):
    x = np.asarray(values)
    holes = np.asarray(data.draw(st.lists(st.booleans(), min_size=len(x), max_size=len(x))))
    holes[0] = False
    punctured = np.where(holes, np.nan, x)
    out = impute_univariate(T(punctured), "mean").table.values[:, 0]
    obs = x[~holes]
    assert abs(out.mean() - obs.mean()) <= 1e-12 * max(1.0, np.abs(obs).max())
    if obs.size >= 2:
        assert out.var(ddof=1) <= obs.var(ddof=1) * (1 + 1e-12) + 1e-12


def test_knn_exact_match_and_equidistant_mean():
    t = T([[1.0, 2.0, 7.0], [5.0, 5.0, 3.0], [1.0, 2.0, np.nan], [9.0, 0.0, 1.0]])
    assert impute_knn(t, 1).table.values[2, 2] == 7.0
    t = T([[0.0, 10.0], [2.0, 20.0], [1.0, np.nan], [9.0, 99.0]])
    assert impute_knn(t, 2).table.values[2, 1] == 15.0


def knn_oracle(x, k):
    """Exhaustive nearest-neighbour fill using the documented rescaled distance."""
    z = standardized(x)
    n, m = x.shape
    out = x.copy()
    for r in range(n):
        for c in range(m):
            if not np.isnan(x[r, c]):
                continue
            cands = []
            for d in range(n):
                if d == r or np.isnan(x[d, c]):
                    continue
                shared = [j for j in range(m) if not np.isnan(x[r, j]) and not np.isnan(x[d, j])]
                if not shared:
                    continue
                ss = sum((z[r, j] - z[d, j]) ** 2 for j in shared)
                cands.append((math.sqrt(ss * m / len(shared)), d))
            cands.sort()
            out[r, c] = sum(x[d, c] for _, d in cands[:k]) / len(cands[:k])
    return out


@pytest.mark.parametrize("seed", range(5))
def test_knn_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    x = mcar_holes(rng.normal(size=(20, 5)) @ rng.normal(size=(5, 5)), 0.15, seed)
    got = impute_knn(T(x), 3).table.values
    assert np.max(np.abs(got - knn_oracle(x, 3))) < 1e-12


def test_knn_large_k_is_donor_mean():
    rng = np.random.default_rng(1)
    x = mcar_holes(rng.normal(size=(15, 3)), 0.2, 1)
    out = impute_knn(T(x), 100).table.values
    for c in range(3):
        holes = np.isnan(x[:, c])
        if holes.any():
            assert np.allclose(out[holes, c], np.nanmean(x[:, c]), atol=1e-12)


def test_knn_isolated_row():
    t = T([[1.0, np.nan], [np.nan, 2.0], [np.nan, 3.0]])
    with pytest.raises(IsolatedRowError):
        impute_knn(t, 1)
    with pytest.raises(ConfigError):
        Knn(0)


def test_low_rank_no_holes_is_fixed_point():
    x = rank_k_matrix(0)
    res = impute_low_rank(T(x), LowRank(rank=2))
    assert res.table.equals(T(x)) and res.diagnostics["iterations"] == 0


@pytest.mark.parametrize("seed", range(3))
def test_low_rank_recovers_rank_two(seed):
    x = rank_k_matrix(seed)
    p = mcar_holes(x, 0.1, seed)
    holes = np.isnan(p)
    res = impute_low_rank(T(p), LowRank(rank=2))
    sd = np.nanstd(p, axis=0, ddof=1)
    err = ((res.table.values - x) / sd)[holes]
    assert math.sqrt(np.mean(err**2)) < 1e-4
    trace = res.diagnostics["objective_trace"]
    assert all(b <= a + 1e-10 for a, b in zip(trace, trace[1:]))


def test_low_rank_rank_one_single_hole():
    rng = np.random.default_rng(3)
    u, v = rng.uniform(1, 2, 12), rng.uniform(1, 2, 6)
    x = np.outer(u, v)
    p = x.copy()
    p[4, 2] = np.nan
    oracle = p[4, 0] * p[7, 2] / p[7, 0]  # rank-1: rows are proportional
    got = impute_low_rank(T(p), LowRank(rank=1, tol=1e-12, max_iter=5000)).table.values[4, 2]
    assert abs(got - oracle) < 1e-6


def test_low_rank_errors_and_non_convergence():
    p = mcar_holes(rank_k_matrix(4), 0.1, 4)
    with pytest.raises(ConfigError):
        impute_low_rank(T(p), LowRank(rank=9))
    res = impute_low_rank(T(p), LowRank(rank=2, max_iter=1))
    assert res.diagnostics["converged"] is False and res.diagnostics["iterations"] == 1


def test_select_rank():
    p = mcar_holes(rank_k_matrix(5), 0.1, 5)
    assert select_rank(T(p), LowRank(seed=5))[0] == 2
    p1 = mcar_holes(rank_k_matrix(6, k=1), 0.1, 6)
    assert select_rank(T(p1), LowRank(seed=6))[0] == 1
    assert select_rank(T(p), LowRank(max_rank=1))[0] == 1
    tiny = T([[1.0, 2.0], [np.nan, 3.0], [2.0, 5.0]])
    with pytest.raises(HoldoutError):
        select_rank(tiny, LowRank())
    res = impute_low_rank(T(p), LowRank(seed=5))
    assert res.diagnostics["selected_rank"] == 2


def test_regression_single_column_is_mean():
    t = T([1.0, np.nan, 5.0, 6.0])
    assert impute_iterative_regression(t).table.equals(impute_univariate(t, "mean").table)


def test_regression_two_column_single_pass_oracle():
    rng = np.random.default_rng(2)
    a = rng.normal(size=30)
    b = 3 * a + rng.normal(size=30)
    b[[3, 8, 20]] = np.nan
    x = np.column_stack([a, b])
    res = impute_iterative_regression(T(x), IterativeRegression(max_iter=1))
    obs = ~np.isnan(b)
    slope, icept = np.polyfit(a[obs], b[obs], 1)
    expected = icept + slope * a[~obs]
    assert np.max(np.abs(res.table.values[~obs, 1] - expected)) < 1e-10


def test_regression_exact_linear_relation():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(200, 4))
    x[:, 3] = 2 * x[:, 0] - x[:, 1] + 0.5
    p = x.copy()
    p[rng.random(200) < 0.2, 3] = np.nan
    res = impute_iterative_regression(T(p))
    assert np.max(np.abs(res.table.values - x)) < 1e-6
    assert res.diagnostics["iterations"] <= 2


def test_regression_fallbacks():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(30, 3))
    x[:, 2] = x[:, 1]  # duplicated predictor
    x[[0, 5], 0] = np.nan
    res = impute_iterative_regression(T(x))
    assert res.diagnostics["ridge_columns"] == ["x0"]
    few = rng.normal(size=(6, 3))
    few[:4, 0] = np.nan
    res = impute_iterative_regression(T(few))
    assert res.diagnostics["fallback_columns"] == ["x0"]
    assert np.allclose(res.table.values[:4, 0], np.nanmean(few[:, 0]))


CONFIGS = [Mean(), Median(), MostFrequent(), Knn(3), LowRank(rank=2), LowRank(), IterativeRegression()]


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: repr(c))
def test_all_imputers_preserve_observed_and_are_deterministic(cfg):
    rng = np.random.default_rng(11)
    p = mcar_holes(rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5)), 0.15, 11)
    t = T(p)
    a, b = impute(t, cfg), impute(t, cfg)
    assert a.table.mask.all()
    assert np.array_equal(a.table.values[t.mask], t.values[t.mask])
    assert np.array_equal(a.table.values, b.table.values)
    rr, cc = np.nonzero(~t.mask)
    assert [(r, c) for r, c, _ in a.filled] == [(int(r), t.column_names[c]) for r, c in zip(rr, cc)]
    assert len(a.filled_csv_text().strip().split("\n")) == len(rr) + 1


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: repr(c))
def test_config_round_trip(cfg):
    assert imputer_from_dict(imputer_to_dict(cfg)) == cfg


def test_config_errors():
    with pytest.raises(ConfigError):
        imputer_from_dict({"method": "kriging"})
    with pytest.raises(ConfigError):
        imputer_from_dict({"method": "knn", "neighbours": 3})
    with pytest.raises(ConfigError):
        LowRank(tol=0)
