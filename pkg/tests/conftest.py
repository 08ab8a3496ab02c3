import numpy as np
import pytest

from missingbench.table import MaskedTable

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f" ({detail})"
        _ACCEPTANCE.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


def rank_k_matrix(seed, n=50, m=8, k=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, k)) @ rng.normal(size=(k, m))


def mcar_holes(x, fraction, seed):
    """Return ``x`` with a seeded ``fraction`` of cells set to NaN, keeping one cell per row and column."""
    rng = np.random.default_rng(seed)
    out = np.array(x, dtype=float, copy=True)
    holes = rng.random(out.shape) < fraction
    holes[np.arange(out.shape[0]), rng.integers(0, out.shape[1], out.shape[0])] = False
    holes[rng.integers(0, out.shape[0], out.shape[1]), np.arange(out.shape[1])] = False
    out[holes] = np.nan
    return out


@pytest.fixture
def three_row_table():
    data = np.array([[1.0, 10.0], [2.0, np.nan], [3.0, 30.0], [np.nan, 20.0]])
    return MaskedTable.from_array(data, ["a", "DR1TKCAL"])
