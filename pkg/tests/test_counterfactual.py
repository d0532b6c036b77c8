import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfcast.counterfactual import (
    BACKTEST_SPLIT,
    DEFAULT_SPLIT,
    ModelChoice,
    ModelOutput,
    compare_models,
    mse,
    parse_summary,
    report_csv,
    report_summary,
    run_backtest,
    run_counterfactual,
)
from cfcast.errors import AggregateError, LengthError, MissingDataError, RangeError, WindowError
from cfcast.sarima import SarimaSpec
from cfcast.series import SplitSpec, TimeSeries

from conftest import seasonal_series

QUICK_SARIMA = ModelChoice("sarima", {"spec": SarimaSpec(p=1, P=1, s=7)})


def oracle_stub(s: TimeSeries):
    """Predicts the true observations (perfect foresight)."""
    def run(train, horizon, seed):
        k = s.index_of(train.end) + 1
        return ModelOutput(np.nan_to_num(s.values[k:k + horizon], nan=0.0))
    return ModelChoice.custom("oracle", run)


def constant_stub(value=None, name="const"):
    def run(train, horizon, seed):
        v = float(np.nanmean(train.values)) if value is None else value
        return ModelOutput(np.full(horizon, v))
    return ModelChoice.custom(name, run)


def failing_stub(name="broken"):
    def run(train, horizon, seed):
        raise ValueError("stub failure")
    return ModelChoice.custom(name, run)


def test_mse_examples():
    assert mse([1, 2], [1, 4]) == 2.0
    assert mse([3, 1, 4], [3, 1, 4]) == 0.0
    assert mse([0, 0, 0], [3, 0, 0]) == 3.0
    with pytest.raises(LengthError):
        mse([1, 2], [1])


def test_perfect_foresight_counterfactual():
    s = seasonal_series()
    rep = run_counterfactual(s, DEFAULT_SPLIT, oracle_stub(s))
    assert rep.mean_excess == 0 and rep.total_excess == 0
    obs, pred = rep.arrays()
    assert np.all(obs - pred == 0)
    assert len(rep.daily) == 121 and rep.daily[0].date == date(2020, 1, 1)


def test_excess_summaries_with_missing_days():
    s = seasonal_series()
    vals = s.values.copy()
    k0 = s.index_of(date(2020, 1, 1))
    vals[k0 + 3] = np.nan
    vals[k0 + 40] = np.nan
    s2 = s.with_values(vals)
    rep = run_counterfactual(s2, DEFAULT_SPLIT, constant_stub(45.0))
    obs, pred = rep.arrays()
    ok = ~np.isnan(obs)
    assert rep.n_missing == 2 and rep.n_valid == 119
    assert rep.mean_excess == pytest.approx(obs[ok].mean() - pred[ok].mean(), abs=1e-9)
    assert rep.total_excess == pytest.approx(np.sum(obs[ok] - pred[ok]), abs=1e-9)
    assert rep.pct_change == pytest.approx(100 * rep.mean_excess / 45.0)
    assert rep.se_excess == pytest.approx(np.std(obs[ok] - 45.0, ddof=1) / math.sqrt(119))
    assert not rep.has_interval


def test_one_day_window():
    s = seasonal_series(end=date(2020, 1, 1))
    split = SplitSpec.from_dates("2017-01-01", "2019-12-31", "2020-01-01")
    rep = run_counterfactual(s, split, constant_stub())
    assert len(rep.daily) == 1
    assert rep.total_excess == rep.mean_excess
    assert math.isnan(rep.se_excess)


def test_empty_predict_window_is_window_error():
    s = seasonal_series(end=date(2020, 1, 10))
    vals = s.values.copy()
    vals[-10:] = np.nan
    split = SplitSpec.from_dates("2017-01-01", "2019-12-31", "2020-01-10")
    with pytest.raises(WindowError):
        run_counterfactual(s.with_values(vals), split, constant_stub())


def test_long_training_gap_is_rejected():
    s = seasonal_series()
    vals = s.values.copy()
    vals[100:110] = np.nan
    with pytest.raises(MissingDataError):
        run_counterfactual(s.with_values(vals), DEFAULT_SPLIT, constant_stub())


def test_sarima_recovers_injected_step():
    rep = run_counterfactual(seasonal_series(step=-20.0), DEFAULT_SPLIT, QUICK_SARIMA)
    assert -25 <= rep.mean_excess <= -15
    assert rep.has_interval
    assert all(r.lower95 <= r.predicted <= r.upper95 for r in rep.daily)


def test_sarima_placebo():
    rep = run_counterfactual(seasonal_series(step=0.0), DEFAULT_SPLIT, QUICK_SARIMA)
    assert abs(rep.mean_excess) <= 3 * rep.se_excess


@settings(max_examples=5, deadline=None)
@given(c=st.floats(-40, 200))
def test_shift_invariance_of_excess(c):
    s = seasonal_series(step=-10.0, start=date(2019, 1, 1), end=date(2020, 2, 15))
    split = SplitSpec.from_dates("2019-01-01", "2019-12-31", "2020-02-15")
    shifted = s.with_values(s.values + c + 50)  # keep values non-negative
    base = s.with_values(s.values + 50)
    a = run_counterfactual(base, split, QUICK_SARIMA)
    b = run_counterfactual(shifted, split, QUICK_SARIMA)
    assert b.mean_excess == pytest.approx(a.mean_excess, abs=1e-6)


def test_backtest_stubs():
    s = seasonal_series()
    assert run_backtest(s, oracle_stub(s)).mse == 0.0
    res = run_backtest(s, constant_stub())
    train = s.window(BACKTEST_SPLIT.train_start, BACKTEST_SPLIT.train_end).values
    hold = s.window(BACKTEST_SPLIT.predict_start, BACKTEST_SPLIT.predict_end).values
    assert res.mse == pytest.approx(np.mean((hold - train.mean()) ** 2), abs=1e-9)
    assert res.split == BACKTEST_SPLIT


def test_backtest_needs_coverage():
    s = seasonal_series(start=date(2017, 6, 1))
    with pytest.raises(RangeError):
        run_backtest(s, constant_stub())


def test_compare_models_ordering_and_failures():
    s = seasonal_series()
    hold_mean = float(np.mean(s.window(BACKTEST_SPLIT.predict_start, BACKTEST_SPLIT.predict_end).values))
    models = [constant_stub(hold_mean + 3, "far"), failing_stub(), constant_stub(hold_mean + 1, "near"),
              oracle_stub(s)]
    cmp_ = compare_models(s, models)
    assert [r.model.label for r in cmp_.results] == ["oracle", "near", "far"]
    assert [r.mse for r in cmp_.results] == sorted(r.mse for r in cmp_.results)
    assert set(cmp_.failures) == {"broken"} and "stub failure" in cmp_.failures["broken"]
    single = compare_models(s, [constant_stub()])
    assert len(single.results) == 1


def test_compare_models_known_mses():
    s = seasonal_series()
    hold = s.window(BACKTEST_SPLIT.predict_start, BACKTEST_SPLIT.predict_end).values

    def offset(d, name):
        def run(train, horizon, seed):
            return ModelOutput(hold + d)
        return ModelChoice.custom(name, run)

    cmp_ = compare_models(s, [offset(math.sqrt(3.0), "three"), offset(1.0, "one")])
    assert [r.mse for r in cmp_.results] == pytest.approx([1.0, 3.0])


def test_compare_models_all_fail():
    with pytest.raises(AggregateError) as exc:
        compare_models(seasonal_series(), [failing_stub("a"), failing_stub("b")])
    assert set(exc.value.failures) == {"a", "b"}


def test_model_choice_validation():
    with pytest.raises(ValueError):
        ModelChoice("prophet")
    with pytest.raises(ValueError):
        ModelChoice("lstm", {"hidden": 3})
    assert ModelChoice("gbt", {"lags": (1, 7), "num_rounds": 5}).label == "gbt"


def test_gbt_and_lstm_forecasters_run():
    s = seasonal_series(start=date(2019, 6, 1), end=date(2020, 1, 31))
    split = SplitSpec.from_dates("2019-06-01", "2019-12-31", "2020-01-31")
    g = run_counterfactual(s, split, ModelChoice("gbt", {"num_rounds": 20}))
    assert len(g.daily) == 31 and not g.has_interval
    assert g.summary["gbt.interval"] == "unavailable"
    lm = run_counterfactual(s, split, ModelChoice("lstm", {"epochs": 3, "hidden_size": 4}), seed=1)
    assert lm.summary["lstm.interval"] == "unavailable"
    lm2 = run_counterfactual(s, split, ModelChoice("lstm", {"epochs": 3, "hidden_size": 4}), seed=1)
    assert report_csv(lm) == report_csv(lm2)


def test_report_serialisation():
    s = seasonal_series()
    vals = s.values.copy()
    vals[s.index_of(date(2020, 2, 2))] = np.nan
    rep = run_counterfactual(s.with_values(vals), DEFAULT_SPLIT, QUICK_SARIMA)
    lines = report_csv(rep).splitlines()
    assert lines[0] == "date,observed,predicted,lower95,upper95,excess"
    assert len(lines) == 122
    missing = next(l for l in lines if l.startswith("2020-02-02"))
    cells = missing.split(",")
    assert cells[1] == "" and cells[5] == "" and cells[2] != ""
    kv = parse_summary(report_summary(rep))
    assert float(kv["mean_excess"]) == rep.mean_excess
    assert kv["days_missing"] == "1"
    assert kv["interval"] == "95% gaussian"
    assert kv["sarima.seasonal_period"] == "7 (assumed)"
