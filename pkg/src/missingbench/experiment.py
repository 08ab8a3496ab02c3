"""Imputation-fidelity and downstream-prediction studies.

Study A punctures a complete-case subsample under each configured mechanism,
runs every imputer and scores MSE on the deleted cells, averaged over seeded
replicates (one row per imputer, one column per mechanism).  Study B imputes
the full dataset with each imputer, splits it 70/30, fits OLS for the
response and reports train/test RMSE.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, MissingbenchError, PreconditionError
from .imputers import LowRank, imputer_from_dict, imputer_to_dict, impute
from .missingness import (
    MCAR,
    MNAR,
    Condition,
    MissingnessSpec,
    apply_missingness,
    base_rate_for_fraction,
    condition_indicator,
)
from .regression import SplitSpec, fit_ols, predict, rmse, train_test_split
from .table import MaskedTable, atomic_write_text, load_csv

log = logging.getLogger(__name__)

DEFAULT_REPLICATES = 10
DEFAULT_EXPECTED_FRACTION = 0.2
MAX_SEED = 2**64


@dataclass(frozen=True)
class MechanismConfig:
    """One mechanism row of study A.

    Exactly one of ``base_rate`` and ``expected_fraction`` is set; the latter
    is turned into a base rate from the condition's prevalence in the
    simulation subsample.
    """

    mechanism: str
    target_columns: tuple
    base_rate: Optional[float] = None
    expected_fraction: Optional[float] = None
    condition: Optional[Condition] = None
    condition_source: Optional[str] = None
    amplification: float = 2.0

    def __post_init__(self):
        if (self.base_rate is None) == (self.expected_fraction is None):
            raise ConfigError(
                f"{self.mechanism}: give exactly one of base_rate and expected_fraction"
            )
        # validates everything else
        self.spec(0.0 if self.base_rate is None else self.base_rate, 0)

    def spec(self, base_rate: float, seed: int) -> MissingnessSpec:
        return MissingnessSpec(
            self.mechanism, self.target_columns, base_rate, self.condition,
            self.condition_source, self.amplification, seed,
        )

    @property
    def name(self) -> str:
        return str(self.mechanism).upper()

    def to_dict(self) -> dict:
        return {
            "mechanism": self.name,
            "target_columns": list(self.target_columns),
            "base_rate": self.base_rate,
            "expected_fraction": self.expected_fraction,
            "condition": None if self.condition is None else self.condition.to_dict(),
            "condition_source": self.condition_source,
            "amplification": float(self.amplification),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MechanismConfig":
        known = {
            "mechanism", "target_columns", "base_rate", "expected_fraction",
            "condition", "condition_source", "amplification",
        }
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown mechanism fields: {sorted(extra)}")
        if "mechanism" not in d or "target_columns" not in d:
            raise ConfigError("mechanism entries need 'mechanism' and 'target_columns'")
        targets = d["target_columns"]
        targets = (targets,) if isinstance(targets, str) else tuple(targets)
        base_rate = d.get("base_rate")
        fraction = d.get("expected_fraction")
        if base_rate is None and fraction is None:
            fraction = DEFAULT_EXPECTED_FRACTION
        cond = d.get("condition")
        return cls(
            mechanism=d["mechanism"],
            target_columns=targets,
            base_rate=None if base_rate is None else float(base_rate),
            expected_fraction=None if fraction is None else float(fraction),
            condition=None if cond is None else Condition.from_dict(cond),
            condition_source=d.get("condition_source"),
            amplification=float(d.get("amplification", 2.0)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    study_columns: tuple
    mechanisms: tuple
    imputers: tuple
    imputer_names: tuple
    response: str
    seed: int
    predictors: Optional[tuple] = None
    schema: Optional[str] = None
    missing_token: str = ""
    complete_case: bool = True
    row_key: Optional[str] = None
    split: Optional[SplitSpec] = None
    n_replicates: int = DEFAULT_REPLICATES
    standardized_mse: bool = True
    impute_after_split: bool = False
    base_dir: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.imputers:
            raise ConfigError("imputer list must not be empty")
        if len(self.imputer_names) != len(self.imputers):
            raise ConfigError("one name per imputer required")
        if len(set(self.imputer_names)) != len(self.imputer_names):
            raise ConfigError(f"imputer names must be distinct: {list(self.imputer_names)}")
        names = [m.name for m in self.mechanisms]
        if len(set(names)) != len(names):
            raise ConfigError(f"mechanisms must be distinct: {names}")
        if not 0 <= int(self.seed) < MAX_SEED:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be >= 1")
        if len(set(self.study_columns)) != len(self.study_columns):
            raise ConfigError("study_columns must be distinct")
        if self.response in self.resolved_predictors:
            raise ConfigError(f"response {self.response!r} is also a predictor")
        if not self.resolved_predictors:
            raise ConfigError("predictor list must not be empty")
        for m in self.mechanisms:
            for c in m.target_columns:
                if c not in self.study_columns:
                    raise ConfigError(f"{m.name} target {c!r} is not a study column")
            if m.name == MNAR and m.condition_source in self.study_columns:
                raise ConfigError(
                    f"MNAR covariate {m.condition_source!r} must not be a study column"
                )

    @property
    def resolved_predictors(self) -> tuple:
        if self.predictors is not None:
            return tuple(self.predictors)
        return tuple(c for c in self.study_columns if c != self.response)

    @property
    def resolved_split(self) -> SplitSpec:
        return self.split if self.split is not None else SplitSpec(0.7, int(self.seed))

    @property
    def replicate_seeds(self) -> list:
        return [(int(self.seed) + i) % MAX_SEED for i in range(self.n_replicates)]

    @property
    def covariate_columns(self) -> tuple:
        return tuple(m.condition_source for m in self.mechanisms if m.name == MNAR)

    def dataset_path(self) -> Path:
        p = Path(self.dataset)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def schema_path(self) -> Optional[Path]:
        if self.schema is None:
            return None
        p = Path(self.schema)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        imps = []
        for name, cfg in zip(self.imputer_names, self.imputers):
            d = imputer_to_dict(cfg)
            if name != cfg.method:
                d["name"] = name
            imps.append(d)
        return {
            "dataset": self.dataset,
            "schema": self.schema,
            "missing_token": self.missing_token,
            "study_columns": list(self.study_columns),
            "complete_case": self.complete_case,
            "mechanisms": [m.to_dict() for m in self.mechanisms],
            "imputers": imps,
            "response": self.response,
            "predictors": None if self.predictors is None else list(self.predictors),
            "row_key": self.row_key,
            "split": None if self.split is None else self.split.to_dict(),
            "seed": int(self.seed),
            "n_replicates": self.n_replicates,
            "standardized_mse": self.standardized_mse,
            "impute_after_split": self.impute_after_split,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        known = {
            "dataset", "schema", "missing_token", "study_columns", "complete_case",
            "mechanisms", "imputers", "response", "predictors", "row_key", "split",
            "seed", "n_replicates", "standardized_mse", "impute_after_split",
        }
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        for key in ("dataset", "study_columns", "mechanisms", "imputers", "response", "seed"):
            if key not in d:
                raise ConfigError(f"config lacks field {key!r}")
        imputers, names = [], []
        for entry in d["imputers"]:
            entry = {"method": entry} if isinstance(entry, str) else dict(entry)
            name = entry.pop("name", entry.get("method"))
            imputers.append(imputer_from_dict(entry))
            names.append(name)
        split = d.get("split")
        try:
            return cls(
                dataset=str(d["dataset"]),
                schema=d.get("schema"),
                missing_token=str(d.get("missing_token", "")),
                study_columns=tuple(d["study_columns"]),
                complete_case=bool(d.get("complete_case", True)),
                mechanisms=tuple(MechanismConfig.from_dict(m) for m in d["mechanisms"]),
                imputers=tuple(imputers),
                imputer_names=tuple(names),
                response=str(d["response"]),
                predictors=None if d.get("predictors") is None else tuple(d["predictors"]),
                row_key=d.get("row_key"),
                split=None if split is None else SplitSpec(**split),
                seed=int(d["seed"]),
                n_replicates=int(d.get("n_replicates", DEFAULT_REPLICATES)),
                standardized_mse=bool(d.get("standardized_mse", True)),
                impute_after_split=bool(d.get("impute_after_split", False)),
                base_dir=None if base_dir is None else str(base_dir),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read a JSON experiment config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def default_runner(table: MaskedTable, imputer_cfg, truth=None):
    """Run one imputer; ``truth`` is accepted so tests can inject an oracle."""
    return impute(table, imputer_cfg)


Runner = Callable


def _load_dataset(cfg: ExperimentConfig) -> MaskedTable:
    schema = cfg.schema_path()
    return load_csv(cfg.dataset_path(), missing_token=cfg.missing_token,
                    schema=None if schema is None else str(schema))


def _replicate_imputer(imp_cfg, seed):
    # rank-selection holdouts follow the replicate seed
    if isinstance(imp_cfg, LowRank):
        return dataclasses.replace(imp_cfg, seed=seed)
    return imp_cfg


def simulation_subsample(cfg: ExperimentConfig, data: MaskedTable):
    """Study-A table, external covariates and the row indices kept."""
    for c in cfg.study_columns + cfg.covariate_columns:
        data.index(c)
    needed = data.select_columns(cfg.study_columns + cfg.covariate_columns)
    if cfg.complete_case:
        rows = np.nonzero(needed.complete_rows())[0]
    else:
        rows = np.arange(data.n_rows)
    if rows.size == 0:
        raise PreconditionError("complete-case subsample is empty")
    sim = data.select_columns(cfg.study_columns).select_rows(rows)
    covariates = {}
    for c in cfg.covariate_columns:
        col = data.select_columns([c]).select_rows(rows)
        if col.has_holes():
            raise PreconditionError(f"covariate {c!r} has missing cells in the subsample")
        covariates[c] = col.values[:, 0].copy()
    return sim, covariates, rows


def _prevalence(m: MechanismConfig, sim: MaskedTable, covariates: dict) -> float:
    if m.name == MCAR:
        return 0.0
    spec = m.spec(0.0, 0)
    cond = condition_indicator(sim, spec, covariates.get(m.condition_source))
    return float(np.mean(cond))


def _score(result_table: MaskedTable, truth, variances: dict, standardized: bool) -> float:
    cols = np.asarray([result_table.index(c) for c in truth.columns], dtype=np.int64)
    if cols.size == 0:
        raise MissingbenchError("simulation deleted no cells; MSE undefined")
    imputed = result_table.values[truth.rows, cols]
    sq = (imputed - truth.values) ** 2
    if standardized:
        sq = sq / np.asarray([variances[c] for c in truth.columns])
    return float(np.mean(sq))


def run_imputation_study(cfg: ExperimentConfig, data: Optional[MaskedTable] = None,
                         runner: Runner = default_runner) -> dict:
    """Study A: mechanism x imputer grid of replicate-mean MSE."""
    data = _load_dataset(cfg) if data is None else data
    sim, covariates, rows = simulation_subsample(cfg, data)
    targets = sorted({c for m in cfg.mechanisms for c in m.target_columns})
    variances = {c: float(np.var(sim.observed(c), ddof=1)) for c in targets}
    seeds = cfg.replicate_seeds

    grid, mech_meta = {}, {}
    for m in cfg.mechanisms:
        prevalence = _prevalence(m, sim, covariates)
        if m.base_rate is not None:
            base_rate = m.base_rate
        else:
            base_rate = base_rate_for_fraction(m.expected_fraction, prevalence, m.amplification)
        cells = {name: {"replicates": [], "errors": []} for name in cfg.imputer_names}
        realized = []
        for seed in seeds:
            spec = m.spec(base_rate, seed)
            cov = covariates.get(m.condition_source) if m.name == MNAR else None
            punctured, truth = apply_missingness(sim, spec, cov)
            realized.append(len(truth) / (sim.n_rows * len(m.target_columns)))
            for name, imp_cfg in zip(cfg.imputer_names, cfg.imputers):
                cell = cells[name]
                try:
                    res = runner(punctured, _replicate_imputer(imp_cfg, seed), truth)
                    cell["replicates"].append(_score(res.table, truth, variances, cfg.standardized_mse))
                except (MissingbenchError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                    log.warning("%s/%s seed %d failed: %s", m.name, name, seed, exc)
                    cell["replicates"].append(None)
                    cell["errors"].append(f"seed {seed}: {type(exc).__name__}: {exc}")
        for name, cell in cells.items():
            vals = cell["replicates"]
            if cell["errors"] or not all(np.isfinite(v) for v in vals):
                cell["status"] = "failed"
                cell["mean"] = None
            else:
                cell["status"] = "ok"
                cell["mean"] = float(np.mean(vals))
        grid[m.name] = cells
        mech_meta[m.name] = {
            "spec": m.spec(base_rate, 0).to_dict() | {"seed": None},
            "condition_prevalence": prevalence,
            "resolved_base_rate": base_rate,
            "expected_fraction": m.expected_fraction,
            "realized_fraction_mean": float(np.mean(realized)),
        }
    return {
        "grid": grid,
        "mechanisms": [m.name for m in cfg.mechanisms],
        "imputers": list(cfg.imputer_names),
        "subsample_rows": int(rows.size),
        "target_variances": variances,
        "mechanism_details": mech_meta,
        "replicate_seeds": seeds,
    }


def _split_keys(cfg: ExperimentConfig, data: MaskedTable, rows: np.ndarray):
    if cfg.row_key is None:
        return None
    col = data.select_columns([cfg.row_key]).select_rows(rows)
    if col.has_holes():
        raise PreconditionError(f"row key {cfg.row_key!r} has missing cells")
    return [repr(float(v)) for v in col.values[:, 0]]


def run_prediction_study(cfg: ExperimentConfig, data: Optional[MaskedTable] = None,
                         runner: Runner = default_runner) -> dict:
    """Study B: per-imputer train/test RMSE of the OLS response model."""
    data = _load_dataset(cfg) if data is None else data
    predictors = cfg.resolved_predictors
    rows = np.nonzero(data.mask[:, data.index(cfg.response)])[0]
    table = data.select_columns(predictors + (cfg.response,)).select_rows(rows)
    keys = _split_keys(cfg, data, rows)
    split = cfg.resolved_split
    train, test = train_test_split(table, split, keys)
    n_pred = len(predictors)

    results = {}
    for name, imp_cfg in zip(cfg.imputer_names, cfg.imputers):
        imp_cfg = _replicate_imputer(imp_cfg, split.seed)
        try:
            if cfg.impute_after_split:
                parts = [runner(table.select_rows(idx), imp_cfg, None).table for idx in (train, test)]
                tr, te = parts[0].values, parts[1].values
            else:
                full = runner(table, imp_cfg, None).table.values
                tr, te = full[train], full[test]
            model = fit_ols(tr[:, :n_pred], tr[:, n_pred], predictors)
            results[name] = {
                "status": "ok",
                "train_rmse": rmse(predict(model, tr[:, :n_pred]), tr[:, n_pred]),
                "test_rmse": rmse(predict(model, te[:, :n_pred]), te[:, n_pred]),
                "coefficients": model.to_dict(),
            }
        except (MissingbenchError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("prediction study %s failed: %s", name, exc)
            results[name] = {
                "status": "failed",
                "train_rmse": None,
                "test_rmse": None,
                "error": f"{type(exc).__name__}: {exc}",
            }
    return {
        "rows": results,
        "imputers": list(cfg.imputer_names),
        "n_rows": int(rows.size),
        "n_train": int(train.size),
        "n_test": int(test.size),
        "holes_before_imputation": int((~table.mask).sum()),
        "predictors": list(predictors),
        "response": cfg.response,
    }


@dataclass
class ExperimentReport:
    study_a: dict
    study_b: dict
    metadata: dict

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "study_a": self.study_a, "study_b": self.study_b}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(study_a=d["study_a"], study_b=d["study_b"], metadata=d["metadata"])

    def failed_cells(self) -> list:
        out = []
        for mech, row in self.study_a["grid"].items():
            out += [f"A:{mech}/{imp}" for imp, c in row.items() if c["status"] != "ok"]
        out += [f"B:{imp}" for imp, r in self.study_b["rows"].items() if r["status"] != "ok"]
        return out


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, runner: Runner = default_runner) -> ExperimentReport:
    """Run both studies and collect metadata on every default in force."""
    data = _load_dataset(cfg)
    study_a = run_imputation_study(cfg, data, runner)
    study_b = run_prediction_study(cfg, data, runner)
    metadata = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "dataset_sha256": _file_sha256(cfg.dataset_path()),
        "dataset_rows": data.n_rows,
        "complete_case_rows": study_a["subsample_rows"],
        "imputer_settings": {
            name: imputer_to_dict(c) for name, c in zip(cfg.imputer_names, cfg.imputers)
        },
        "defaults": {
            "mse_scale": "standardized (divided by complete-case sample variance of the target)"
            if cfg.standardized_mse else "raw",
            "std_convention": "sample (n-1)",
            "base_rate_rule": f"expected overall deletion fraction {DEFAULT_EXPECTED_FRACTION} "
                              "unless base_rate is given",
            "replicates": cfg.n_replicates,
            "replicate_seed_rule": "seed + replicate index",
            "rng": "Philox counter-based, one uniform per target cell, row-major",
            "imputer_scale": "knn, lowrank and regression work on standardized columns",
            "knn_distance": "euclidean over shared coordinates * sqrt(n_cols / n_shared)",
            "lowrank": "hard impute with per-iteration column centering; rank 'auto' by "
                       "cell holdout, holdout seed = replicate seed",
            "regression_imputer": "linear OLS, columns visited by ascending hole count, mean start",
            "prediction_order": "impute then split" if not cfg.impute_after_split
                                else "split then impute each part",
            "split": cfg.resolved_split.to_dict() | {"rounding": "half-up on train side"},
            "predictors": list(cfg.resolved_predictors),
            "response": cfg.response,
        },
    }
    return ExperimentReport(study_a, study_b, metadata)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return "FAILED" if v is None else f"{v:.6f}"


def table2_csv(report: ExperimentReport) -> str:
    a = report.study_a
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["imputer"] + a["mechanisms"])
    for imp in a["imputers"]:
        w.writerow([imp] + [_fmt(a["grid"][m][imp]["mean"]) for m in a["mechanisms"]])
    return buf.getvalue()


def table3_csv(report: ExperimentReport) -> str:
    b = report.study_b
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["imputer", "train_rmse", "test_rmse"])
    for imp in b["imputers"]:
        row = b["rows"][imp]
        w.writerow([imp, _fmt(row["train_rmse"]), _fmt(row["test_rmse"])])
    return buf.getvalue()


def report_json(report: ExperimentReport) -> str:
    return canonical_json(report.to_dict())


REPORT_FILES = ("report.json", "table2.csv", "table3.csv")


def serialize_report(report: ExperimentReport, directory, formats=("json", "csv")) -> list:
    """Write ``report.json`` and/or ``table2.csv`` + ``table3.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            atomic_write_text(directory / "report.json", report_json(report))
            written.append(directory / "report.json")
        elif fmt == "csv":
            atomic_write_text(directory / "table2.csv", table2_csv(report))
            atomic_write_text(directory / "table3.csv", table3_csv(report))
            written += [directory / "table2.csv", directory / "table3.csv"]
        else:
            raise ConfigError(f"unknown report format {fmt!r}")
    return written


def read_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
