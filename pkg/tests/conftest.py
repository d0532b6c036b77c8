import csv
import os
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

ACCEPTANCE_LOG: list[str] = []

REPO = Path(__file__).resolve().parents[1]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)


def write_csv(path, start, columns: dict, skip=()):
    """Write a city-schema CSV; ``None``/NaN cells are left empty, ``skip`` drops rows."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + names)
        for k in range(n):
            if k in skip:
                continue
            row = [(start + timedelta(days=k)).isoformat()]
            for c in names:
                v = columns[c][k]
                row.append("" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v)))
            w.writerow(row)
    return path


def synthetic_city(seed=0, start=date(2017, 1, 1), end=date(2020, 12, 31), lockdown=None):
    """Seasonal pollutant table with AQI driven by PM2.5; optional NO2 drop from ``lockdown``."""
    rng = np.random.default_rng(seed)
    n = (end - start).days + 1
    t = np.arange(n)
    yr = np.cos(2 * np.pi * t / 365.25)
    wk = np.sin(2 * np.pi * t / 7)
    pm25 = np.clip(55 + 30 * yr + rng.normal(0, 12, n), 2, None)
    cols = {
        "aqi": np.clip(pm25 * 1.9 + rng.normal(0, 4, n), 5, None),
        "so2": np.clip(10 + 3 * yr + rng.normal(0, 2, n), 1, None),
        "no2": np.clip(42 + 10 * yr + 4 * wk + rng.normal(0, 5, n), 2, None),
        "co": np.clip(1.0 + 0.3 * yr + rng.normal(0, 0.1, n), 0.1, None),
        "o3": np.clip(90 - 30 * yr + rng.normal(0, 12, n), 2, None),
        "pm10": np.clip(pm25 * 1.5 + rng.normal(0, 20, n), 2, None),
        "pm2_5": pm25,
    }
    if lockdown is not None:
        k = (lockdown - start).days
        cols["no2"][k:] = np.clip(cols["no2"][k:] - 15, 1, None)
    return cols


@pytest.fixture
def city_csv(tmp_path):
    return write_csv(tmp_path / "city.csv", date(2017, 1, 1), synthetic_city())


def real_dataset() -> Path | None:
    """Location of the public city dataset, if it has been placed alongside the repo."""
    candidates = []
    if os.environ.get("CFCAST_DATA"):
        candidates.append(Path(os.environ["CFCAST_DATA"]))
    candidates += [REPO / "data" / "wuhan.csv", REPO / "data" / "city_daily.csv"]
    for c in candidates:
        if c.is_file():
            return c
    return None


def seasonal_series(seed=7, step=0.0, start=date(2017, 1, 1), end=date(2020, 4, 30),
                    step_at=date(2020, 1, 1), variable="NO2"):
    """50 + weekly wave + N(0, 2) noise, with ``step`` added from ``step_at`` on."""
    from cfcast.series import TimeSeries

    rng = np.random.default_rng(seed)
    n = (end - start).days + 1
    t = np.arange(n)
    y = 50 + 5 * np.sin(2 * np.pi * t / 7) + rng.normal(0, 2, n)
    y[(step_at - start).days:] += step
    return TimeSeries(variable, start, y)
