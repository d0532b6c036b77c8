from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cfcast.errors import DuplicateDateError, LengthError, RangeError, RowError, SchemaError
from cfcast.series import (
    SplitSpec,
    TimeSeries,
    difference,
    from_values,
    integrate,
    interpolate_missing,
    load_csv,
    load_table,
    split,
    weekly_mean,
)

from conftest import synthetic_city, write_csv


def test_load_fills_gap(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,no2\n2017-01-01,10\n2017-01-03,14\n")
    s = load_csv(p, "NO2")
    assert len(s) == 3
    assert s.missing.tolist() == [False, True, False]
    assert s.values[0] == 10 and s.values[2] == 14


def test_load_duplicate_date(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,no2\n2017-01-01,10\n2017-01-01,11\n")
    with pytest.raises(DuplicateDateError) as exc:
        load_csv(p, "NO2")
    assert exc.value.line == 3


def test_load_city_schema_each_variable(tmp_path):
    cols = synthetic_city(end=date(2017, 3, 31))
    p = write_csv(tmp_path / "c.csv", date(2017, 1, 1), cols)
    for name in ("AQI", "SO2", "NO2", "CO", "O3", "PM10", "PM2.5"):
        s = load_csv(p, name)
        assert s.variable == name
        assert len(s) == 90
    np.testing.assert_allclose(load_csv(p, "pm2_5").values, cols["pm2_5"])


def test_load_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("date,no2\n2017-01-01,10\n2017-01-02,10\n")
    with pytest.raises(SchemaError, match="o3"):
        load_csv(p, "O3")
    p.write_text("date,no2\n2017-01-01,10\n2017-13-02,10\n")
    with pytest.raises(RowError, match="line 3"):
        load_csv(p, "NO2")
    p.write_text("date,no2\n2017-01-01,10\n2017-01-02,abc\n")
    with pytest.raises(RowError, match="line 3"):
        load_csv(p, "NO2")
    p.write_text("date,no2\n2017-01-01,10\n2017-01-02,-1\n")
    with pytest.raises(RowError, match="negative"):
        load_csv(p, "NO2")
    p.write_text("day,no2\n2017-01-01,10\n")
    with pytest.raises(SchemaError, match="date"):
        load_csv(p, "NO2")


def test_empty_cell_is_missing_and_case_insensitive_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("Date,NO2,PM2_5\n2017-01-01,10,\n2017-01-02,,3\n2017-01-03,12,4\n")
    t = load_table(p, ["no2", "PM2.5"])
    assert t["NO2"].missing.tolist() == [False, True, False]
    assert t["PM2.5"].missing.tolist() == [True, False, False]


def test_interpolate_examples():
    s = from_values("NO2", "2017-01-01", [10, None, 14])
    filled, gaps = interpolate_missing(s, 1)
    assert filled.values.tolist() == [10, 12, 14] and gaps == []

    s = from_values("NO2", "2017-01-01", [10, None, None, None, 14])
    filled, gaps = interpolate_missing(s, 2)
    assert np.isnan(filled.values[1:4]).all()
    assert len(gaps) == 1 and gaps[0].start == date(2017, 1, 2) and gaps[0].length == 3

    s = from_values("NO2", "2017-01-01", [1, 2, 3])
    filled, gaps = interpolate_missing(s, 3)
    assert filled.values.tolist() == [1, 2, 3] and gaps == []


def test_weekly_mean_examples():
    s = from_values("NO2", "2017-01-01", [5] * 14)
    assert [m for _, m in weekly_mean(s)] == [5, 5]
    s = from_values("NO2", "2017-01-01", range(1, 8))
    assert weekly_mean(s) == [(date(2017, 1, 1), 4.0)]
    s = from_values("NO2", "2017-01-01", [2, None, 2, None, 2, None, 2])
    assert weekly_mean(s)[0][1] == 2.0


def test_weekly_mean_all_missing_block_is_nan():
    s = from_values("NO2", "2017-01-01", [1, 2] + [None] * 5 + [None] * 7 + [3])
    out = weekly_mean(s)
    assert out[0][1] == 1.5 and np.isnan(out[1][1]) and out[2][1] == 3.0


def test_difference_examples():
    assert difference([1, 2, 4, 7], 1, 0).tolist() == [1, 2, 3]
    assert difference([1, 2, 3, 4, 5, 6], 0, 1, 2).tolist() == [2, 2, 2, 2]
    x = [3.0, 1.0, 4.0]
    assert difference(x, 0, 0).tolist() == x
    with pytest.raises(LengthError):
        difference([1, 2], 1, 1, 1)


def test_integrate_examples():
    assert integrate([1, 2, 3], [1], 1, 0).tolist() == [1, 2, 4, 7]
    assert integrate([2, 2, 2, 2], [1, 2], 0, 1, 2).tolist() == [1, 2, 3, 4, 5, 6]
    assert integrate([5, 6], [], 0, 0).tolist() == [5, 6]
    with pytest.raises(LengthError):
        integrate([1, 2], [1, 2], 1, 0)


@settings(max_examples=200, deadline=None)
@given(
    x=arrays(np.float64, st.integers(40, 80), elements=st.floats(-1e3, 1e3)),
    d=st.integers(0, 2), D=st.integers(0, 2), s=st.sampled_from([1, 7, 12]),
)
def test_round_trip_property(x, d, D, s):
    head = x[: d + D * s]
    back = integrate(difference(x, d, D, s), head, d, D, s)
    np.testing.assert_allclose(back, x, rtol=0, atol=1e-9 * max(1.0, np.abs(x).max()))


@settings(max_examples=100, deadline=None)
@given(
    data=arrays(np.float64, (2, 50), elements=st.floats(-100, 100)),
    a=st.floats(-5, 5), b=st.floats(-5, 5),
    d=st.integers(0, 2), D=st.integers(0, 1), s=st.sampled_from([1, 7]),
)
def test_difference_is_linear(data, a, b, d, D, s):
    x, y = data
    lhs = difference(a * x + b * y, d, D, s)
    rhs = a * difference(x, d, D, s) + b * difference(y, d, D, s)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)


@given(c=st.floats(0, 1e4), n=st.integers(2, 60))
def test_weekly_mean_of_constant(c, n):
    s = from_values("O3", "2018-03-01", [c] * n)
    assert all(m == pytest.approx(c) for _, m in weekly_mean(s))


def _count_days(first: date, last: date) -> int:
    # Independent oracle: step through the calendar one day at a time.
    n, d = 0, first
    while d <= last:
        n += 1
        d = d + timedelta(days=1)
    return n


def test_split_default_windows():
    n = _count_days(date(2017, 1, 1), date(2020, 4, 30))
    s = TimeSeries("NO2", date(2017, 1, 1), np.arange(n, dtype=float))
    spec = SplitSpec(date(2017, 1, 1), date(2019, 12, 31), date(2020, 1, 1), date(2020, 4, 30))
    train, pred = split(s, spec)
    assert len(train) == _count_days(date(2017, 1, 1), date(2019, 12, 31)) == 1095
    assert len(pred) == _count_days(date(2020, 1, 1), date(2020, 4, 30)) == 121
    assert np.concatenate([train.values, pred.values]).tolist() == s.values.tolist()


def test_split_errors_and_one_day_window():
    s = TimeSeries("NO2", date(2017, 1, 1), np.ones(30))
    with pytest.raises(RangeError):
        split(s, SplitSpec.from_dates("2017-01-01", "2017-01-20", "2017-02-05"))
    train, pred = split(s, SplitSpec.from_dates("2017-01-01", "2017-01-20", "2017-01-21"))
    assert len(pred) == 1 and len(train) == 20


@settings(max_examples=50, deadline=None)
@given(n=st.integers(10, 200), data=st.data())
def test_split_concatenates_back(n, data):
    s = TimeSeries("CO", date(2019, 2, 20), np.linspace(0, 1, n))
    a = data.draw(st.integers(0, n - 3))
    b = data.draw(st.integers(a + 1, n - 2))
    c = data.draw(st.integers(b + 1, n - 1))
    d0 = s.start
    spec = SplitSpec.from_dates(d0 + timedelta(a), d0 + timedelta(b), d0 + timedelta(c))
    train, pred = split(s, spec)
    assert train.end + timedelta(days=1) == pred.start
    joined = np.concatenate([train.values, pred.values])
    assert joined.tolist() == s.values[a:c + 1].tolist()


def test_split_spec_invariants():
    with pytest.raises(RangeError):
        SplitSpec(date(2017, 1, 2), date(2017, 1, 1), date(2017, 1, 2), date(2017, 1, 3))
    with pytest.raises(RangeError):
        SplitSpec(date(2017, 1, 1), date(2017, 1, 5), date(2017, 1, 7), date(2017, 1, 9))


def test_series_invariants():
    with pytest.raises(LengthError):
        from_values("NO2", "2017-01-01", [1, None])
    with pytest.raises(ValueError):
        from_values("NO2", "2017-01-01", [1, -2])
    with pytest.raises(SchemaError):
        from_values("benzene", "2017-01-01", [1, 2])
    s = from_values("pm2_5", "2020-02-28", [1, 2, 3])
    assert s.variable == "PM2.5"
    assert s.end == date(2020, 3, 1)
    assert [o.missing for o in s.observations] == [False] * 3
    with pytest.raises(ValueError):
        s.values[0] = 5
