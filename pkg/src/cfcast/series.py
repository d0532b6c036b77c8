"""Daily pollutant series: loading, gap handling, resampling and differencing.

A :class:`TimeSeries` stores a start date plus a float array with one entry per
calendar day; missing days are ``NaN``.  Instances are frozen and their arrays
are marked read-only, so they can be shared freely between threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateDateError,
    LengthError,
    RangeError,
    RowError,
    SchemaError,
)

VARIABLES = ("SO2", "NO2", "CO", "O3", "PM10", "PM2.5", "AQI")
POLLUTANTS = ("SO2", "NO2", "CO", "O3", "PM10", "PM2.5")

ONE_DAY = timedelta(days=1)


def canonical_variable(name: str) -> str:
    """Map a user or header spelling (``pm2_5``, ``Pm2.5``, ``aqi``) to its canonical name."""
    key = name.strip().lower().replace("_", ".")
    for v in VARIABLES:
        if v.lower() == key:
            return v
    raise SchemaError(f"unknown variable {name!r}; expected one of {', '.join(VARIABLES)}")


def column_key(name: str) -> str:
    """CSV column spelling of a variable: lower case with ``.`` written as ``_``."""
    return canonical_variable(name).lower().replace(".", "_")


@dataclass(frozen=True)
class Observation:
    date: date
    value: float
    missing: bool


@dataclass(frozen=True)
class SplitSpec:
    train_start: date
    train_end: date
    predict_start: date
    predict_end: date

    def __post_init__(self):
        if not self.train_start < self.train_end:
            raise RangeError("train_start must precede train_end")
        if self.predict_start != self.train_end + ONE_DAY:
            raise RangeError("predict_start must be the day after train_end")
        if self.predict_end < self.predict_start:
            raise RangeError("predict_end precedes predict_start")

    @classmethod
    def from_dates(cls, train_start, train_end, predict_end, predict_start=None):
        """Build from ISO strings or dates; ``predict_start`` defaults to the day after ``train_end``."""
        ts, te, pe = (_as_date(d) for d in (train_start, train_end, predict_end))
        ps = te + ONE_DAY if predict_start is None else _as_date(predict_start)
        return cls(ts, te, ps, pe)

    @property
    def train_days(self) -> int:
        return (self.train_end - self.train_start).days + 1

    @property
    def predict_days(self) -> int:
        return (self.predict_end - self.predict_start).days + 1


def _as_date(d) -> date:
    if isinstance(d, date):
        return d
    return date.fromisoformat(str(d).strip())


@dataclass(frozen=True)
class TimeSeries:
    """Consecutive daily values for one variable; ``NaN`` marks a missing day."""

    variable: str
    start: date
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variable", canonical_variable(self.variable))
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise LengthError("series values must be one-dimensional")
        present = vals[~np.isnan(vals)]
        if present.size < 2:
            raise LengthError("a series needs at least 2 non-missing observations")
        if not np.all(np.isfinite(present)):
            raise ValueError("series values must be finite")
        if np.any(present < 0):
            raise ValueError("series values must be non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def end(self) -> date:
        return self.start + timedelta(days=len(self) - 1)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(len(self))]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(d, float(v), bool(math.isnan(v)))
            for d, v in zip(self.dates, self.values)
        ]

    def index_of(self, day: date) -> int:
        return (day - self.start).days

    def window(self, first: date, last: date) -> "TimeSeries":
        if first < self.start or last > self.end or last < first:
            raise RangeError(f"window {first}..{last} outside series {self.start}..{self.end}")
        i, j = self.index_of(first), self.index_of(last) + 1
        return _unchecked(self.variable, first, self.values[i:j])

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.variable, self.start, values)


def _unchecked(variable: str, start: date, values: np.ndarray) -> TimeSeries:
    # Slices of a valid series may hold fewer than 2 present values (e.g. a
    # one-day predict window), so bypass the constructor's length check.
    ts = object.__new__(TimeSeries)
    vals = np.array(values, dtype=float)
    vals.setflags(write=False)
    object.__setattr__(ts, "variable", variable)
    object.__setattr__(ts, "start", start)
    object.__setattr__(ts, "values", vals)
    return ts


def from_values(variable: str, start, values: Iterable[float]) -> TimeSeries:
    """Convenience constructor; ``None`` entries become missing."""
    vals = [np.nan if v is None else float(v) for v in values]
    return TimeSeries(variable, _as_date(start), np.asarray(vals))


def read_table(path, variables: Sequence[str] | None = None) -> tuple[list[date], dict[str, list[float]]]:
    """Read recognised variable columns of an input CSV.

    Returns the dates in file order and a mapping from canonical variable
    name to values (``NaN`` for empty cells).  Only ``variables`` are parsed
    and validated when given; absent ones are simply missing from the map.
    """
    wanted = None if variables is None else {canonical_variable(v) for v in variables}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        if "date" not in names:
            raise SchemaError(f"{path}: missing 'date' column")
        date_col = names.index("date")
        columns: dict[str, int] = {}
        for i, n in enumerate(names):
            if i == date_col:
                continue
            try:
                var = canonical_variable(n)
            except SchemaError:
                continue
            if wanted is None or var in wanted:
                columns[var] = i

        dates: list[date] = []
        data: dict[str, list[float]] = {v: [] for v in columns}
        seen: dict[date, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                day = date.fromisoformat(row[date_col].strip())
            except (ValueError, IndexError):
                raise RowError(lineno, "unparseable date") from None
            if day in seen:
                raise DuplicateDateError(lineno, f"duplicate date {day} (first seen on line {seen[day]})")
            seen[day] = lineno
            dates.append(day)
            for var, col in columns.items():
                cell = row[col].strip() if col < len(row) else ""
                if not cell:
                    data[var].append(math.nan)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise RowError(lineno, f"unparseable {var} value {cell!r}") from None
                if not math.isfinite(value):
                    raise RowError(lineno, f"non-finite {var} value")
                if value < 0:
                    raise RowError(lineno, f"negative {var} value {value}")
                data[var].append(value)
    return dates, data


def _to_daily(variable: str, dates: Sequence[date], values: Sequence[float]) -> TimeSeries:
    if not dates:
        raise LengthError("no data rows")
    order = sorted(range(len(dates)), key=dates.__getitem__)
    first, last = dates[order[0]], dates[order[-1]]
    out = np.full((last - first).days + 1, np.nan)
    for k in order:
        out[(dates[k] - first).days] = values[k]
    return TimeSeries(variable, first, out)


def load_csv(path, variable: str) -> TimeSeries:
    """Load one variable from a CSV as a gap-filled daily series.

    Days absent from the file become missing entries.  Raises
    :class:`SchemaError` when the column is absent, :class:`RowError` for bad
    cells and :class:`DuplicateDateError` for repeated dates.
    """
    var = canonical_variable(variable)
    dates, data = read_table(path, [var])
    if var not in data:
        raise SchemaError(f"{path}: missing column {column_key(var)!r}")
    return _to_daily(var, dates, data[var])


def load_table(path, variables: Sequence[str]) -> dict[str, TimeSeries]:
    """Load several variables from one file, all on the file's common date range."""
    dates, data = read_table(path, variables)
    out = {}
    for v in variables:
        var = canonical_variable(v)
        if var not in data:
            raise SchemaError(f"{path}: missing column {column_key(var)!r}")
        out[var] = _to_daily(var, dates, data[var])
    return out


@dataclass(frozen=True)
class GapReport:
    """A run of missing days left in place by :func:`interpolate_missing`."""

    start: date
    length: int


def interpolate_missing(s: TimeSeries, max_gap: int = 3) -> tuple[TimeSeries, list[GapReport]]:
    """Linearly fill runs of at most ``max_gap`` missing days.

    Longer runs stay missing and are returned as :class:`GapReport` entries.
    Leading or trailing missing runs have no anchor on one side and are
    reported without being filled.
    """
    vals = np.array(s.values)
    miss = np.isnan(vals)
    gaps: list[GapReport] = []
    i, n = 0, vals.size
    while i < n:
        if not miss[i]:
            i += 1
            continue
        j = i
        while j < n and miss[j]:
            j += 1
        run = j - i
        if i == 0 or j == n or run > max_gap:
            gaps.append(GapReport(s.start + timedelta(days=i), run))
        else:
            lo, hi = vals[i - 1], vals[j]
            frac = np.arange(1, run + 1) / (run + 1)
            vals[i:j] = lo + (hi - lo) * frac
        i = j
    return s.with_values(vals), gaps


def weekly_mean(s: TimeSeries) -> list[tuple[date, float]]:
    """Means over consecutive 7-day blocks anchored at the first date.

    Missing days are ignored; a block with no present values yields ``NaN``.
    The trailing block may be shorter than 7 days.
    """
    out = []
    for i in range(0, len(s), 7):
        block = s.values[i:i + 7]
        present = block[~np.isnan(block)]
        m = float(present.mean()) if present.size else math.nan
        out.append((s.start + timedelta(days=i), m))
    return out


def difference(x, d: int = 0, D: int = 0, s: int = 1) -> np.ndarray:
    """Apply ``(1 - B)^d (1 - B^s)^D`` and drop the ``d + D*s`` undefined leading values."""
    x = np.asarray(x, dtype=float)
    if d < 0 or D < 0 or s < 1:
        raise ValueError("d, D must be >= 0 and s >= 1")
    if x.size <= d + D * s:
        raise LengthError(f"length {x.size} too short for d={d}, D={D}, s={s}")
    for _ in range(D):
        x = x[s:] - x[:-s]
    for _ in range(d):
        x = x[1:] - x[:-1]
    return x


def integrate(diffed, head, d: int = 0, D: int = 0, s: int = 1) -> np.ndarray:
    """Invert :func:`difference` given the first ``d + D*s`` original values."""
    diffed = np.asarray(diffed, dtype=float)
    head = np.asarray(head, dtype=float)
    if head.size != d + D * s:
        raise LengthError(f"head has {head.size} values, need d + D*s = {d + D * s}")
    if d == 0 and D == 0:
        return diffed.copy()
    # Heads of each intermediate stage: stage k is x after k seasonal differences.
    stages = [head]
    for _ in range(D):
        prev = stages[-1]
        stages.append(prev[s:] - prev[:-s])
    # After all seasonal differences, stage holds d values; rebuild the ordinary
    # differences first, innermost (highest order) last.
    ordinary = [stages[-1]]
    for _ in range(d):
        prev = ordinary[-1]
        ordinary.append(prev[1:] - prev[:-1])
    y = diffed
    for k in range(d, 0, -1):
        y = np.concatenate(([ordinary[k - 1][0]], ordinary[k - 1][0] + np.cumsum(y)))
    for k in range(D, 0, -1):
        seed = stages[k - 1][:s]
        out = np.empty(y.size + s)
        out[:s] = seed
        for r in range(s):
            out[s + r::s] = seed[r] + np.cumsum(y[r::s])
        y = out
    return y


def split(s: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    """Cut ``s`` into the train and predict windows of ``spec``."""
    if spec.train_start < s.start or spec.predict_end > s.end:
        raise RangeError(
            f"split {spec.train_start}..{spec.predict_end} outside series {s.start}..{s.end}"
        )
    return s.window(spec.train_start, spec.train_end), s.window(spec.predict_start, spec.predict_end)
