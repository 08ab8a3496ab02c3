import json

import numpy as np
import pytest

from conftest import mcar_holes, rank_k_matrix
from missingbench.cli import main
from missingbench.datasets import DEMO_CONFIG_FILE, dataset_path, write_example
from missingbench.table import MaskedTable, load_csv, write_csv


@pytest.fixture
def complete_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 400
    g = rng.integers(1, 3, n).astype(float)
    x = np.column_stack([g, rng.normal(size=n), np.round(rng.normal(size=n), 3)])
    path = tmp_path / "complete.csv"
    write_csv(MaskedTable.from_array(x, ["g", "y", "z"]), path)
    return path


def test_simulate_rate_zero_copies_input(tmp_path, complete_csv):
    out, truth = tmp_path / "out.csv", tmp_path / "truth.csv"
    code = main(["simulate", "--input", str(complete_csv), "--output", str(out), "--truth", str(truth),
                 "--mechanism", "mcar", "--target", "y", "--rate", "0", "--seed", "1"])
    assert code == 0
    assert out.read_bytes() == complete_csv.read_bytes()
    assert truth.read_text().strip() == "row,column,value"


def test_simulate_truth_rows_match_new_holes(tmp_path, complete_csv):
    out, truth = tmp_path / "out.csv", tmp_path / "truth.csv"
    args = ["simulate", "--input", str(complete_csv), "--output", str(out), "--truth", str(truth),
            "--mechanism", "mar", "--target", "y", "--rate", "0.2", "--condition-column", "g",
            "--equals", "2", "--seed", "5"]
    assert main(args) == 0
    punctured = load_csv(out)
    assert len(truth.read_text().strip().split("\n")) - 1 == (~punctured.mask).sum()
    assert main(args) == 3  # existing outputs are not overwritten
    assert main(args + ["--force"]) == 0


def test_simulate_mnar_without_covariate(tmp_path, complete_csv, capsys):
    code = main(["simulate", "--input", str(complete_csv), "--output", str(tmp_path / "o.csv"),
                 "--truth", str(tmp_path / "t.csv"), "--mechanism", "mnar", "--target", "y",
                 "--rate", "0.1", "--seed", "1"])
    assert code == 2
    assert "covariate" in capsys.readouterr().err


def test_simulate_requires_seed(tmp_path, complete_csv):
    code = main(["simulate", "--input", str(complete_csv), "--output", str(tmp_path / "o.csv"),
                 "--truth", str(tmp_path / "t.csv"), "--mechanism", "mcar", "--target", "y",
                 "--rate", "0.1"])
    assert code == 2


def test_impute_mean_fixture(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("a,b\n1,4\n,5\n3,6\n")
    out = tmp_path / "out.csv"
    assert main(["impute", "--input", str(src), "--output", str(out), "--method", "mean"]) == 0
    t = load_csv(out)
    assert t.values[1, 0] == 2.0 and t.mask.all()
    assert (tmp_path / "out.diagnostics.json").exists()


def test_impute_lowrank_auto_reports_rank(tmp_path):
    src = tmp_path / "in.csv"
    write_csv(MaskedTable.from_array(mcar_holes(rank_k_matrix(1), 0.1, 1)), src)
    out, diag = tmp_path / "out.csv", tmp_path / "diag.json"
    code = main(["impute", "--input", str(src), "--output", str(out), "--method", "lowrank",
                 "--rank", "auto", "--seed", "1", "--diagnostics", str(diag)])
    assert code == 0
    assert json.loads(diag.read_text())["diagnostics"]["selected_rank"] == 2


def test_impute_error_codes(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("a,b\n1,\n2,\n")
    with pytest.raises(SystemExit) as err:
        main(["impute", "--input", str(src), "--output", str(tmp_path / "o.csv"), "--method", "kriging"])
    assert err.value.code == 2
    assert main(["impute", "--input", str(src), "--output", str(tmp_path / "o.csv"), "--method", "mean"]) == 4
    assert main(["impute", "--input", str(tmp_path / "nope.csv"), "--output", str(tmp_path / "o.csv"),
                 "--method", "mean"]) == 3


def test_diagnose(tmp_path, complete_csv):
    out = tmp_path / "diag"
    assert main(["diagnose", "--input", str(complete_csv), "--output-dir", str(out)]) == 0
    miss = out.joinpath("missingness.csv").read_text().strip().split("\n")[1:]
    assert all(line.split(",")[1] == "0" for line in miss)
    rows = [r.split(",") for r in out.joinpath("correlation.csv").read_text().strip().split("\n")]
    assert len(rows) == 4 and all(len(r) == 4 for r in rows)
    assert [float(rows[i][i]) for i in range(1, 4)] == [1.0, 1.0, 1.0]


def test_diagnose_chi2_on_mar_fixture(tmp_path):
    rng = np.random.default_rng(3)
    n = 5000
    g = rng.integers(1, 3, n).astype(float)
    path = tmp_path / "c.csv"
    write_csv(MaskedTable.from_array(np.column_stack([g, rng.normal(size=n)]), ["PAQ650", "DR1TKCAL"]), path)
    punct = tmp_path / "p.csv"
    assert main(["simulate", "--input", str(path), "--output", str(punct), "--truth", str(tmp_path / "t.csv"),
                 "--mechanism", "mar", "--target", "DR1TKCAL", "--rate", "0.1",
                 "--condition-column", "PAQ650", "--equals", "2", "--seed", "8"]) == 0
    out = tmp_path / "diag"
    assert main(["diagnose", "--input", str(punct), "--output-dir", str(out),
                 "--chi2", "DR1TKCAL:PAQ650=2"]) == 0
    res = json.loads(out.joinpath("chi_squared.json").read_text())
    assert res[0]["p_value"] < 0.01


def test_fit_and_predict(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 2))
    y = 3 * x[:, 0] - x[:, 1] + 1
    src = tmp_path / "d.csv"
    write_csv(MaskedTable.from_array(np.column_stack([x, y]), ["a", "b", "y"]), src)
    model = tmp_path / "m.json"
    assert main(["fit", "--input", str(src), "--response", "y", "--output", str(model)]) == 0
    coef = json.loads(model.read_text())
    assert coef["coefficients"] == pytest.approx([3.0, -1.0], abs=1e-10)
    pred = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--input", str(src), "--output", str(pred)]) == 0
    t = load_csv(pred)
    assert np.allclose(t.values[:, t.index("prediction")], y, atol=1e-9)


def test_experiment_determinism_and_seed_hash(tmp_path, capsys):
    write_example(tmp_path, n=300, seed=3)
    raw = json.loads(dataset_path(DEMO_CONFIG_FILE).read_text())
    raw["n_replicates"] = 1
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(raw))
    base = ["experiment", "--config", str(cfg)]
    assert main(base + ["--run-root", str(tmp_path / "r1")]) == 0
    assert main(base + ["--run-root", str(tmp_path / "r2")]) == 0
    (d1,) = (tmp_path / "r1").iterdir()
    (d2,) = (tmp_path / "r2").iterdir()
    assert d1.name == d2.name
    for name in ("report.json", "table2.csv", "table3.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    assert len((d1 / "table2.csv").read_text().strip().split("\n")) == 7
    assert main(base + ["--run-root", str(tmp_path / "r1")]) == 3
    assert main(base + ["--run-root", str(tmp_path / "r1"), "--seed", "99"]) == 0
    assert len(list((tmp_path / "r1").iterdir())) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(raw | {"imputers": []}))
    assert main(["experiment", "--config", str(bad), "--run-root", str(tmp_path / "r3")]) == 2


@pytest.mark.parametrize("command", ["simulate", "impute", "fit", "predict", "diagnose", "experiment"])
def test_help_documents_flags(command, capsys):
    with pytest.raises(SystemExit) as err:
        main([command, "--help"])
    assert err.value.code == 0
    text = capsys.readouterr().out
    assert "--force" in text and "default" in text
