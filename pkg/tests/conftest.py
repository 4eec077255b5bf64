from __future__ import annotations

import numpy as np
import pytest

from tsflow import DataSet, TimeArray

HOUR = 3600
T0 = 1_609_459_200  # 2021-01-01T00:00:00Z

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def series(values, name="x", start=T0, step=HOUR) -> TimeArray:
    values = np.asarray(values, dtype=np.float64)
    return TimeArray(name, start + step * np.arange(values.shape[0], dtype=np.int64), values)


def dataset(index=None, **cols) -> DataSet:
    n = len(next(iter(cols.values())))
    if index is None:
        index = T0 + HOUR * np.arange(n, dtype=np.int64)
    return DataSet.from_arrays(index, cols)


def random_values(rng: np.random.Generator, n: int, nan_rate: float = 0.1) -> np.ndarray:
    v = rng.normal(rng.uniform(-10, 10), rng.uniform(0.5, 5), size=n)
    v[rng.random(n) < nan_rate] = np.nan
    return v


@pytest.fixture(autouse=True)
def _isolated_cwd(tmp_path, monkeypatch):
    # callbacks without a callback_dir write relative to the working directory
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
