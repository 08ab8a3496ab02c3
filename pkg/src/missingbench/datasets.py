"""Synthetic NHANES-style example dataset.

Columns follow the 2013-2014 NHANES variable names.  Values come from a
latent factor model (age, sex, body size, physical activity, socioeconomic
status) whose Gaussian scores are mapped to each column's marginal: coded
questionnaire items by normal-quantile thresholds, measurements by affine
maps (log-normal for caloric intake).  Systolic blood pressure is a linear function of several columns plus
noise.  A few columns receive natural holes, with dietary missingness tied to
vigorous exercise.

Regenerate the shipped file with ``python -m missingbench.datasets``.
"""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .table import CATEGORICAL, CONTINUOUS, MaskedTable, load_csv, schema_dict, write_csv

DATA_PACKAGE = "missingbench.data"
DATASET_FILE = "synthetic_nhanes.csv"
DEMO_CONFIG_FILE = "demo_config.json"

# Table 1 variables; RIDRETH1 stands in for the ambiguous "RIDRETH1[3]"
TABLE1_COLUMNS = (
    "RIDAGEYR", "RIAGENDR", "RIDRETH1", "DMDCITZN", "BMXLEG", "BPXPULS",
    "DIQ010", "DIQ050", "HIQ011", "PAQ635", "PAQ650", "PAQ665", "PAD680",
    "PAQ710", "DR1TKCAL",
)
RESPONSE = "BPXSY1"
HIDDEN_COVARIATE = "BMXBMI"
ROW_KEY = "SEQN"
SIMULATION_COLUMNS = TABLE1_COLUMNS + (RESPONSE,)
ALL_COLUMNS = (ROW_KEY,) + SIMULATION_COLUMNS + (HIDDEN_COVARIATE,)

DESCRIPTIONS = {
    "SEQN": "Respondent sequence number",
    "RIDAGEYR": "Age in years",
    "RIAGENDR": "Gender (1 male, 2 female)",
    "RIDRETH1": "Race/Ethnicity",
    "DMDCITZN": "Citizenship (1 citizen, 2 not)",
    "BMXLEG": "Upper leg length (cm)",
    "BPXPULS": "Pulse regular (1) or irregular (2)",
    "DIQ010": "Doctor told you have diabetes (1 yes, 2 no, 3 borderline)",
    "DIQ050": "Taking insulin now (1 yes, 2 no)",
    "HIQ011": "Covered by health insurance (1 yes, 2 no)",
    "PAQ635": "Walk or bicycle (1 yes, 2 no)",
    "PAQ650": "Vigorous recreational activities (1 yes, 2 no)",
    "PAQ665": "Moderate recreational activities (1 yes, 2 no)",
    "PAD680": "Minutes sedentary activity",
    "PAQ710": "Hours watch TV or videos (0-5)",
    "DR1TKCAL": "Energy intake, day 1 (kcal)",
    "BPXSY1": "Systolic blood pressure, 1st reading (mm Hg)",
    "BMXBMI": "Body mass index (kg/m**2)",
}

FACTORS = ("age", "male", "body", "active", "ses")

# factor loadings of each column's latent Gaussian score
LOADINGS = {
    "RIDAGEYR": {"age": 0.95},
    "RIAGENDR": {"male": -0.97},
    "RIDRETH1": {"ses": 0.3},
    "DMDCITZN": {"ses": -0.45},
    "BMXLEG": {"male": 0.55, "body": 0.45, "age": -0.25},
    "BPXPULS": {"age": 0.25},
    "DIQ010": {"age": -0.4, "body": -0.4},
    "DIQ050": {"age": -0.3, "body": -0.35},
    "HIQ011": {"ses": -0.5, "age": -0.2},
    "PAQ635": {"active": -0.35},
    "PAQ650": {"active": -0.75, "age": 0.3},
    "PAQ665": {"active": -0.55, "age": 0.1},
    "PAD680": {"active": -0.4, "age": 0.2, "ses": 0.2},
    "PAQ710": {"active": -0.35, "age": 0.25, "ses": -0.2},
    "DR1TKCAL": {"male": 0.5, "active": 0.45, "age": -0.3, "body": 0.3},
    "BMXBMI": {"body": 0.85, "active": -0.2},
}

# (code, probability) from low to high latent score
CODE_TABLES = {
    "RIAGENDR": [(1, 0.48), (2, 0.52)],
    "RIDRETH1": [(1, 0.14), (2, 0.10), (3, 0.42), (4, 0.20), (5, 0.14)],
    "DMDCITZN": [(1, 0.88), (2, 0.12)],
    "BPXPULS": [(1, 0.97), (2, 0.03)],
    "DIQ010": [(1, 0.12), (3, 0.03), (2, 0.85)],
    "DIQ050": [(1, 0.04), (2, 0.96)],
    "HIQ011": [(1, 0.83), (2, 0.17)],
    "PAQ635": [(1, 0.27), (2, 0.73)],
    "PAQ650": [(1, 0.26), (2, 0.74)],
    "PAQ665": [(1, 0.42), (2, 0.58)],
    "PAQ710": [(0, 0.1), (1, 0.2), (2, 0.25), (3, 0.2), (4, 0.12), (5, 0.13)],
}

# column -> (center, scale, low, high, rounding step)
CONTINUOUS_MAPS = {
    "BMXLEG": (38.5, 3.6, 25.0, 52.0, 0.1),
    "PAD680": (360.0, 180.0, 0.0, 1200.0, 30.0),
    "BMXBMI": (28.7, 6.6, 14.0, 70.0, 0.1),
}
# log-normal caloric intake: median 2000 kcal, log-scale sd 0.38
KCAL_MEDIAN = 2000.0
KCAL_LOG_SD = 0.38


def _codes(z, table):
    probs = np.cumsum([p for _, p in table])[:-1]
    cuts = stats.norm.ppf(probs)
    idx = np.searchsorted(cuts, z)
    return np.asarray([c for c, _ in table], dtype=np.float64)[idx]


def _latent_scores(n, rng):
    f = rng.standard_normal((n, len(FACTORS)))
    scores = {}
    for col, load in LOADINGS.items():
        lam = np.array([load.get(k, 0.0) for k in FACTORS])
        noise = np.sqrt(1.0 - lam @ lam)
        scores[col] = f @ lam + noise * rng.standard_normal(n)
    return scores


def make_synthetic_nhanes(n: int = 3000, seed: int = 2014, with_holes: bool = True) -> MaskedTable:
    """Generate the example dataset as a :class:`MaskedTable`."""
    rng = np.random.default_rng(seed)
    z = _latent_scores(n, rng)
    cols = {ROW_KEY: 73557.0 + np.arange(n)}
    for name in TABLE1_COLUMNS + (HIDDEN_COVARIATE,):
        if name in CODE_TABLES:
            cols[name] = _codes(z[name], CODE_TABLES[name])
        elif name == "RIDAGEYR":
            cols[name] = np.floor(20 + 61 * stats.norm.cdf(z[name])).clip(20, 80)
        elif name == "DR1TKCAL":
            cols[name] = np.round(KCAL_MEDIAN * np.exp(KCAL_LOG_SD * z[name]))
        else:
            center, scale, lo, hi, step = CONTINUOUS_MAPS[name]
            x = np.clip(center + scale * z[name], lo, hi)
            cols[name] = np.round(np.round(x / step) * step, 6)

    bp = (
        118.0
        + 0.48 * (cols["RIDAGEYR"] - 50)
        + 4.0 * (cols["RIAGENDR"] == 1)
        + 0.55 * (cols["BMXBMI"] - 28.7)
        + 3.0 * (cols["RIDRETH1"] == 4)
        + 2.5 * (cols["DIQ010"] == 1)
        - 1.5 * (cols["PAQ650"] == 1)
        + 0.6 * cols["PAQ710"]
        + 0.0015 * (cols["DR1TKCAL"] - KCAL_MEDIAN)
        + 13.5 * rng.standard_normal(n)
    )
    cols[RESPONSE] = np.round(np.clip(bp, 80, 230))

    data = np.column_stack([cols[c] for c in ALL_COLUMNS])
    mask = np.ones_like(data, dtype=bool)
    if with_holes:
        j = ALL_COLUMNS.index
        # dietary recall missing more often without vigorous activity
        p_diet = np.where(cols["PAQ650"] == 2, 0.12, 0.05)
        mask[:, j("DR1TKCAL")] = rng.random(n) >= p_diet
        mask[:, j("BMXLEG")] = rng.random(n) >= 0.04
        mask[:, j("PAD680")] = rng.random(n) >= 0.02
        mask[:, j("BMXBMI")] = rng.random(n) >= 0.01
    kinds = [CATEGORICAL if c in CODE_TABLES else CONTINUOUS for c in ALL_COLUMNS]
    codes = {c: tuple(code for code, _ in t) for c, t in CODE_TABLES.items()}
    return MaskedTable(ALL_COLUMNS, tuple(kinds), data, mask, codes)


def dataset_path(name: str = DATASET_FILE) -> Path:
    """Filesystem path of a file shipped in the package data directory."""
    return Path(str(resources.files(DATA_PACKAGE).joinpath(name)))


def load_example(missing_token: str = "") -> MaskedTable:
    return load_csv(dataset_path(), missing_token=missing_token)


def write_example(directory, n: int = 3000, seed: int = 2014) -> Path:
    directory = Path(directory)
    t = make_synthetic_nhanes(n, seed)
    out = directory / DATASET_FILE
    write_csv(t, out)
    schema = schema_dict(t)
    for name, entry in schema["columns"].items():
        entry["description"] = DESCRIPTIONS[name]
    (directory / (out.stem + ".schema.json")).write_text(json.dumps(schema, indent=2) + "\n")
    return out


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else str(dataset_path().parent)
    print(write_example(target))
