"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 computation error.  Flags override values from ``--config`` files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DEMO_CONFIG_FILE, dataset_path
from .diagnostics import (
    chi_squared_independence,
    co_missingness,
    missingness_summary,
    pearson_correlation_matrix,
)
from .errors import (
    ConfigError,
    LoadError,
    MissingbenchError,
    MissingCovariateError,
    SchemaError,
)
from .experiment import REPORT_FILES, config_hash, load_config, run_experiment, serialize_report
from .imputers import AUTO, METHODS, imputer_from_dict, imputer_to_dict, impute
from .missingness import EQUALS, GREATER_THAN, MNAR, MissingnessSpec, apply_missingness
from .regression import OlsModel, SplitSpec, fit_ols, predict, rmse, train_test_split
from .table import atomic_write_text, format_number, load_csv, table_to_csv_text

log = logging.getLogger("missingbench")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_COMPUTE = 4
RUN_ROOT_ENV = "MISSINGBENCH_RUN_ROOT"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def _check_outputs(paths, force):
    for p in paths:
        if p is not None and Path(p).exists() and not force:
            raise CliError(f"{p} exists; pass --force to overwrite", EXIT_IO)


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, text)


def _json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _simulation_spec(args, covariate_table=None):
    base = _read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise ConfigError("missingness config must be a JSON object")
    d = dict(base)
    if args.mechanism is not None:
        d["mechanism"] = args.mechanism.upper()
    if args.target:
        d["target_columns"] = args.target
    if args.rate is not None:
        d["base_rate"] = args.rate
    if args.amplification is not None:
        d["amplification"] = args.amplification
    if args.seed is not None:
        d["seed"] = args.seed
    if args.equals is not None:
        d["condition"] = {"op": EQUALS, "value": args.equals}
    if args.greater_than is not None:
        d["condition"] = {"op": GREATER_THAN, "value": args.greater_than}
    if args.condition_column is not None:
        d["condition_source"] = args.condition_column
    if covariate_table is not None:
        if args.covariate_column is not None:
            d["condition_source"] = args.covariate_column
        elif d.get("condition_source") is None and covariate_table.n_cols == 1:
            d["condition_source"] = covariate_table.column_names[0]
    for key, flag in (("mechanism", "--mechanism"), ("target_columns", "--target"),
                      ("base_rate", "--rate")):
        if key not in d:
            raise ConfigError(f"missing {key} (set {flag} or give it in --config)")
    if "seed" not in d:
        raise ConfigError("no seed: pass --seed or set 'seed' in --config")
    return MissingnessSpec.from_dict(d)


def _mechanism_requested(args):
    if args.mechanism is not None:
        return args.mechanism.upper()
    if args.config:
        base = _read_json(args.config)
        if isinstance(base, dict):
            return str(base.get("mechanism", "")).upper()
    return ""


def cmd_simulate(args):
    cov_table = None
    if _mechanism_requested(args) == MNAR:
        if args.covariate is None:
            raise MissingCovariateError(
                "MNAR needs an external covariate: pass --covariate FILE [--covariate-column NAME]"
            )
        cov_table = load_csv(args.covariate, missing_token=args.missing_token)
    spec = _simulation_spec(args, cov_table)
    _check_outputs([args.output, args.truth], args.force)
    table = load_csv(args.input, missing_token=args.missing_token)
    covariate = None
    if cov_table is not None:
        name = spec.condition_source
        if name not in cov_table.column_names:
            raise SchemaError(f"covariate file lacks column {name!r}")
        if cov_table.has_holes():
            raise SchemaError("covariate file has missing cells")
        covariate = cov_table.values[:, cov_table.index(name)]
    punctured, truth = apply_missingness(table, spec, covariate)
    _write(args.output, table_to_csv_text(punctured, args.missing_token))
    _write(args.truth, truth.to_csv_text())
    frac = len(truth) / max(table.n_rows * len(spec.target_columns), 1)
    print(f"masked {len(truth)} cells; realized missing fraction {frac:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# impute
# ---------------------------------------------------------------------------


def _imputer_config(args):
    d = dict(_read_json(args.config)) if args.config else {}
    if args.method is not None:
        if d.get("method") not in (None, args.method):
            d = {}
        d["method"] = args.method
    if "method" not in d:
        raise ConfigError("no method: pass --method or give it in --config")
    method = d["method"]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    overrides = {
        "knn": {"k": args.k},
        "lowrank": {"rank": args.rank, "max_iter": args.max_iter, "tol": args.tol,
                    "holdout_fraction": args.holdout_fraction, "max_rank": args.max_rank,
                    "seed": args.seed},
        "regression": {"max_iter": args.max_iter, "tol": args.tol, "ridge_eps": args.ridge_eps},
    }.get(method, {})
    for key, value in overrides.items():
        if value is not None:
            d[key] = value
    if method == "lowrank":
        rank = d.get("rank", AUTO)
        if isinstance(rank, str) and rank != AUTO:
            try:
                rank = int(rank)
            except ValueError:
                raise ConfigError(f"--rank must be an integer or 'auto', got {rank!r}") from None
        d["rank"] = rank
        if rank == AUTO and "seed" not in d:
            raise ConfigError("rank auto uses a random holdout: pass --seed")
    return imputer_from_dict(d)


def cmd_impute(args):
    cfg = _imputer_config(args)
    diag_path = args.diagnostics or str(Path(args.output).with_suffix("")) + ".diagnostics.json"
    _check_outputs([args.output, diag_path, args.filled], args.force)
    table = load_csv(args.input, missing_token=args.missing_token)
    result = impute(table, cfg)
    _write(args.output, table_to_csv_text(result.table, args.missing_token))
    diag = {
        "config": imputer_to_dict(cfg),
        "n_filled": len(result.filled_rows),
        "diagnostics": result.diagnostics,
    }
    _write(diag_path, _json_text(diag))
    if args.filled:
        _write(args.filled, result.filled_csv_text())
    extra = ""
    if "selected_rank" in result.diagnostics:
        extra = f"; selected rank {result.diagnostics['selected_rank']}"
    print(f"filled {len(result.filled_rows)} cells with {cfg.method}{extra}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit / predict
# ---------------------------------------------------------------------------


def _predictor_list(args, table):
    if args.predictors:
        preds = [p.strip() for p in args.predictors.split(",") if p.strip()]
    else:
        excluded = {args.response, *(args.exclude or [])}
        preds = [c for c in table.column_names if c not in excluded]
    if args.response in preds:
        raise ConfigError("response must not be a predictor")
    for c in preds + [args.response]:
        table.index(c)
    if not preds:
        raise ConfigError("no predictor columns")
    return preds


def cmd_fit(args):
    _check_outputs([args.output], args.force)
    table = load_csv(args.input, missing_token=args.missing_token)
    preds = _predictor_list(args, table)
    sub = table.select_columns(preds + [args.response])
    if sub.has_holes():
        raise MissingbenchError("model columns contain missing cells; run impute first")
    X, y = sub.values[:, :-1], sub.values[:, -1]
    doc = {}
    if args.seed is not None:
        train, test = train_test_split(sub, SplitSpec(args.train_fraction, args.seed))
        model = fit_ols(X[train], y[train], preds)
        doc["split"] = {"train_fraction": args.train_fraction, "seed": args.seed,
                        "n_train": int(train.size), "n_test": int(test.size)}
        doc["train_rmse"] = rmse(predict(model, X[train]), y[train])
        doc["test_rmse"] = rmse(predict(model, X[test]), y[test])
        print(f"train RMSE {doc['train_rmse']:.6f}; test RMSE {doc['test_rmse']:.6f}")
    else:
        model = fit_ols(X, y, preds)
        doc["train_rmse"] = rmse(predict(model, X), y)
        print(f"train RMSE {doc['train_rmse']:.6f}")
    out = model.to_dict()
    out["response"] = args.response
    out["evaluation"] = doc
    _write(args.output, _json_text(out))
    return EXIT_OK


def cmd_predict(args):
    _check_outputs([args.output], args.force)
    doc = _read_json(args.model)
    model = OlsModel.from_dict(doc)
    table = load_csv(args.input, missing_token=args.missing_token)
    for c in model.predictor_names:
        table.index(c)
    sub = table.select_columns(model.predictor_names)
    if sub.has_holes():
        raise MissingbenchError("predictor columns contain missing cells; run impute first")
    yhat = predict(model, sub.values)
    lines = ["prediction"] + [format_number(v) for v in yhat]
    _write(args.output, "\n".join(lines) + "\n")
    response = args.response or doc.get("response")
    if response and response in table.column_names:
        j = table.index(response)
        if table.mask[:, j].all():
            print(f"RMSE {rmse(yhat, table.values[:, j]):.6f}")
    print(f"wrote {len(yhat)} predictions")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _chi2_pair(spec, table):
    """Parse ``A:B``, ``A:B=v`` or ``A:~B`` into two binary vectors."""
    if ":" not in spec:
        raise ConfigError(f"--chi2 expects A:B, A:B=value or A:~B, got {spec!r}")
    left, right = spec.split(":", 1)
    a_missing = ~table.mask[:, table.index(left)]
    if right.startswith("~"):
        return a_missing, ~table.mask[:, table.index(right[1:])], f"missing({right[1:]})"
    name, _, value = right.partition("=")
    j = table.index(name)
    rows = table.mask[:, j]
    col = table.values[rows, j]
    if value:
        level = float(value)
    else:
        levels = np.unique(col)
        if levels.size != 2:
            raise ConfigError(f"{name} has {levels.size} levels; use {name}=value")
        level = float(levels[0])
    return a_missing[rows], col == level, f"{name}=={format_number(level)}"


def cmd_diagnose(args):
    out = Path(args.output_dir)
    names = ["correlation.csv", "missingness.csv", "co_missingness.csv", "chi_squared.json"]
    _check_outputs([out / n for n in names], args.force)
    table = load_csv(args.input, missing_token=args.missing_token)
    corr = pearson_correlation_matrix(table)
    cols = table.column_names

    def matrix_csv(m, fmt):
        rows = [",".join(("column",) + cols)]
        for name, row in zip(cols, m):
            rows.append(",".join([name] + [fmt(v) for v in row]))
        return "\n".join(rows) + "\n"

    out.mkdir(parents=True, exist_ok=True)
    _write(out / "correlation.csv", matrix_csv(corr, lambda v: "NA" if np.isnan(v) else f"{v:.6f}"))
    summary = ["column,n_missing,fraction_missing"]
    summary += [f"{n},{k},{f:.6f}" for n, k, f in missingness_summary(table)]
    _write(out / "missingness.csv", "\n".join(summary) + "\n")
    _write(out / "co_missingness.csv", matrix_csv(co_missingness(table), lambda v: str(int(v))))

    results = []
    for pair in args.chi2 or []:
        a, b, label = _chi2_pair(pair, table)
        left = pair.split(":", 1)[0]
        entry = {"pair": pair, "a": f"missing({left})", "b": label, "n": int(a.size)}
        try:
            res = chi_squared_independence(a, b)
            entry.update(statistic=res.statistic, dof=res.dof, p_value=res.p_value,
                         table=[list(r) for r in res.table])
            print(f"chi2 {pair}: statistic {res.statistic:.4f}, p {res.p_value:.4g}")
        except MissingbenchError as exc:
            entry["error"] = str(exc)
            print(f"chi2 {pair}: {exc}")
        results.append(entry)
    _write(out / "chi_squared.json", _json_text(results))
    n_missing = int((~table.mask).sum())
    print(f"{table.n_rows} rows, {table.n_cols} columns, {n_missing} missing cells")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def cmd_experiment(args):
    config_path = args.config or str(dataset_path(DEMO_CONFIG_FILE))
    cfg = load_config(config_path)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.replicates is not None:
        cfg = dataclasses.replace(cfg, n_replicates=args.replicates)
    root = Path(args.run_root or os.environ.get(RUN_ROOT_ENV) or "runs")
    run_dir = root / config_hash(cfg)
    _check_outputs([run_dir / n for n in REPORT_FILES], args.force)
    report = run_experiment(cfg)
    serialize_report(report, run_dir)
    failed = report.failed_cells()
    print(str(run_dir))
    print(f"complete-case rows {report.metadata['complete_case_rows']}; "
          f"{len(failed)} flagged cells" + (f": {', '.join(failed)}" if failed else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="missingbench",
        description="Simulate missingness, impute, and evaluate OLS prediction on tabular data.",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, token=True):
        if token:
            p.add_argument("--missing-token", default="", help="CSV text marking a missing cell")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("simulate", help="delete cells under MCAR/MAR/MNAR", formatter_class=fmt)
    p.add_argument("--input", required=True, help="complete CSV table")
    p.add_argument("--output", required=True, help="punctured CSV to write")
    p.add_argument("--truth", required=True, help="ground-truth CSV (row,column,value) to write")
    p.add_argument("--config", help="missingness spec JSON; flags override its fields")
    p.add_argument("--mechanism", type=str.lower, choices=["mcar", "mar", "mnar"])
    p.add_argument("--target", action="append", help="target column (repeatable)")
    p.add_argument("--rate", type=float, help="base deletion probability")
    p.add_argument("--amplification", type=float,
                   help="multiplier for rows meeting the condition (spec default 2)")
    p.add_argument("--condition-column", help="MAR conditioning column of the input")
    cond = p.add_mutually_exclusive_group()
    cond.add_argument("--equals", type=float, help="condition: covariate == value")
    cond.add_argument("--greater-than", type=float, help="condition: covariate > value")
    p.add_argument("--covariate", help="MNAR: CSV holding the external covariate")
    p.add_argument("--covariate-column", help="MNAR: covariate column name in --covariate")
    p.add_argument("--seed", type=int, help="generator seed (required here or in --config)")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("impute", help="fill missing cells", formatter_class=fmt)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="completed CSV to write")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--config", help="imputer config JSON; flags override its fields")
    p.add_argument("--k", type=int, help="knn: neighbours (default 5)")
    p.add_argument("--rank", help="lowrank: integer rank or 'auto' (default auto)")
    p.add_argument("--max-iter", type=int,
                   help="lowrank/regression: iteration cap (defaults 100/10)")
    p.add_argument("--tol", type=float, help="lowrank/regression: tolerance (defaults 1e-5/1e-4)")
    p.add_argument("--holdout-fraction", type=float, help="lowrank auto: held-out share (0.2)")
    p.add_argument("--max-rank", type=int, help="lowrank auto: largest candidate rank (10)")
    p.add_argument("--ridge-eps", type=float, help="regression: ridge fallback (1e-8)")
    p.add_argument("--seed", type=int, help="lowrank auto: holdout seed")
    p.add_argument("--diagnostics", help="diagnostics JSON path (default: <output stem>.diagnostics.json)")
    p.add_argument("--filled", help="optional CSV of filled cells (row,column,value)")
    common(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("fit", help="fit OLS on a complete table", formatter_class=fmt)
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--predictors", help="comma-separated predictor columns (default: all others)")
    p.add_argument("--exclude", action="append", help="column left out of default predictors")
    p.add_argument("--output", required=True, help="model JSON to write")
    p.add_argument("--seed", type=int, help="if given, fit on a seeded train split and score test")
    p.add_argument("--train-fraction", type=float, default=0.7)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="apply a fitted model", formatter_class=fmt)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="CSV with a 'prediction' column")
    p.add_argument("--response", help="score RMSE against this column when present")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="correlation, missingness and chi-squared summaries",
                       formatter_class=fmt)
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--chi2", action="append", metavar="PAIR",
                   help="missing(A) vs B: 'A:B' (binary B), 'A:B=value', or 'A:~B' (missing B)")
    common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("experiment", help="run both studies and write a report",
                       formatter_class=fmt)
    p.add_argument("--config", help="experiment JSON (default: shipped demo config)")
    p.add_argument("--seed", type=int, help="override the config's base seed")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--run-root", help=f"parent of run directories (env {RUN_ROOT_ENV}, else ./runs)")
    common(p, token=False)
    p.set_defaults(func=cmd_experiment)
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (ConfigError, SchemaError, MissingCovariateError)):
        return EXIT_USAGE
    if isinstance(exc, (LoadError, OSError)):
        return EXIT_IO
    return EXIT_COMPUTE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, MissingbenchError, OSError) as exc:
        print(f"missingbench {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
