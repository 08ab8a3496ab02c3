import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missingbench.errors import (
    DegenerateColumnError,
    EmptyColumnError,
    LoadError,
    SchemaError,
)
from missingbench.table import (
    CATEGORICAL,
    CONTINUOUS,
    MaskedTable,
    column_stats,
    destandardize,
    load_csv,
    standardize,
    table_to_csv_text,
    write_csv,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_one_empty_cell(tmp_path):
    p = write(tmp_path / "t.csv", "RIDAGEYR,DR1TKCAL\n40,2100\n51,\n63,1800\n")
    t = load_csv(p)
    assert t.shape == (3, 2)
    assert (~t.mask).sum() == 1
    assert not t.mask[1, t.index("DR1TKCAL")]


def test_load_all_observed_bit_equal(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3)) * 1e3
    text = "a,b,c\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in x) + "\n"
    t = load_csv(write(tmp_path / "t.csv", text))
    assert t.mask.all()
    assert np.array_equal(t.values, x)


def test_na_token_matches_empty_field_variant(tmp_path):
    rng = np.random.default_rng(1)
    x = np.round(rng.normal(size=(20, 5)), 4)
    holes = rng.random(x.shape) < 0.2

    def render(token):
        lines = ["v0,v1,v2,v3,v4"]
        for i in range(20):
            lines.append(",".join(token if holes[i, j] else repr(float(x[i, j])) for j in range(5)))
        return "\n".join(lines) + "\n"

    a = load_csv(write(tmp_path / "empty.csv", render("")))
    b = load_csv(write(tmp_path / "na.csv", render("NA")), missing_token="NA")
    assert np.array_equal(a.mask, ~holes)
    assert np.array_equal(a.mask, b.mask)
    assert a.equals(b)


def test_ragged_row_is_load_error(tmp_path):
    p = write(tmp_path / "t.csv", "a,b\n1,2\n3\n")
    with pytest.raises(LoadError) as err:
        load_csv(p)
    assert err.value.row == 2


def test_unparseable_cell_names_row_and_column(tmp_path):
    p = write(tmp_path / "t.csv", "a,b\n1,2\n3,abc\n")
    with pytest.raises(LoadError) as err:
        load_csv(p)
    assert (err.value.row, err.value.column) == (2, "b")
    assert "abc" in str(err.value)


def test_duplicate_header_is_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path / "t.csv", "a,a\n1,2\n"))


def test_kind_inference_and_sidecar_override(tmp_path):
    p = write(tmp_path / "t.csv", "g,x\n1,0.5\n2,1.5\n1,2.25\n")
    t = load_csv(p)
    assert t.column_kinds == (CATEGORICAL, CONTINUOUS)
    write(tmp_path / "t.schema.json", json.dumps({"columns": {"g": {"kind": "continuous"}}}))
    assert load_csv(p).column_kinds == (CONTINUOUS, CONTINUOUS)


def test_code_set_violation(tmp_path):
    p = write(tmp_path / "t.csv", "g\n1\n2\n3\n")
    schema = {"columns": {"g": {"kind": "categorical", "codes": [1, 2]}}}
    with pytest.raises(SchemaError):
        load_csv(p, schema=schema)


def test_write_then_load_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 3))
    x[rng.random(x.shape) < 0.2] = np.nan
    t = MaskedTable.from_array(x, ["a", "b", "c"])
    write_csv(t, tmp_path / "o.csv")
    back = load_csv(tmp_path / "o.csv")
    assert back.equals(t)
    assert table_to_csv_text(back) == table_to_csv_text(t)


def test_table_invariants():
    with pytest.raises(SchemaError):
        MaskedTable(("a",), (CONTINUOUS,), np.zeros((2, 1)), np.ones((3, 1), bool))
    with pytest.raises(SchemaError):
        MaskedTable(("a", "a"), (CONTINUOUS,) * 2, np.zeros((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(SchemaError):
        MaskedTable(("a",), (CONTINUOUS,), np.array([[np.inf]]), np.ones((1, 1), bool))
    t = MaskedTable(("a",), (CONTINUOUS,), np.array([[1.0], [5.0]]), np.array([[True], [False]]))
    assert np.isnan(t.values[1, 0])
    assert not t.values.flags.writeable


def test_column_stats_examples(three_row_table):
    s = column_stats(three_row_table, "a")
    assert (s.mean, s.median, s.n_observed) == (2.0, 2.0, 3)
    c = column_stats(MaskedTable.from_array([2.0, 2.0, 2.0]), "x0")
    assert (c.std, c.mode) == (0.0, 2.0)
    assert column_stats(MaskedTable.from_array([2.0, 1.0, 2.0, 1.0]), "x0").mode == 1.0
    assert column_stats(MaskedTable.from_array([1.0, 4.0, 2.0, 3.0]), "x0").median == 2.5


def test_column_stats_empty_column():
    with pytest.raises(EmptyColumnError):
        column_stats(MaskedTable.from_array([np.nan, np.nan]), "x0")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_column_stats_permutation_invariant(values, rnd):
    x = np.asarray(values, dtype=float)
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    a = column_stats(MaskedTable.from_array(x), "x0")
    b = column_stats(MaskedTable.from_array(x[perm]), "x0")
    assert a.median == b.median and a.mode == b.mode and a.n_observed == b.n_observed
    assert a.mean == pytest.approx(b.mean, abs=1e-12)
    assert a.std == pytest.approx(b.std, abs=1e-12)
    assert a.std >= 0 and a.mode in x


def test_standardize_two_points():
    # mean 5, sample std sqrt(50)
    z, params = standardize(MaskedTable.from_array([0.0, 10.0]))
    expected = 5.0 / np.sqrt(50.0)
    assert z.values[:, 0] == pytest.approx([-expected, expected], abs=1e-15)
    assert params.scale[0] == pytest.approx(np.sqrt(50.0))


def test_standardize_fixed_point():
    x = np.array([-1.5, -0.5, 0.5, 1.5])
    x = x / np.std(x, ddof=1)
    z, _ = standardize(MaskedTable.from_array(x))
    assert np.max(np.abs(z.values[:, 0] - x)) < 1e-12


def test_standardize_round_trip_and_mask():
    rng = np.random.default_rng(3)
    x = rng.normal(50, 20, size=(40, 4))
    x[rng.random(x.shape) < 0.1] = np.nan
    t = MaskedTable.from_array(x)
    z, params = standardize(t)
    assert np.array_equal(z.mask, t.mask)
    back = destandardize(z, params)
    assert np.max(np.abs(back.values[t.mask] - t.values[t.mask])) < 1e-10


def test_standardize_degenerate_column():
    t = MaskedTable.from_array(np.column_stack([np.ones(5), np.arange(5.0)]))
    with pytest.raises(DegenerateColumnError):
        standardize(t)
    z, params = standardize(t, allow_degenerate=True)
    assert params.scale[0] == 1.0 and np.all(z.values[:, 0] == 0)
    cat = MaskedTable(("g", "x"), (CATEGORICAL, CONTINUOUS), t.values, t.mask)
    standardize(cat)
