"""Counterfactual experiments: fit before the intervention, forecast after, compare.

A model is described by a :class:`ModelChoice`.  Every model kind reduces to
a forecaster ``(train, horizon, seed) -> ModelOutput``; tests and callers can
plug in their own through ``ModelChoice.custom``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from datetime import date, timedelta
from typing import Callable, Mapping, Sequence

import numpy as np

from . import lstm, sarima, trees
from .errors import AggregateError, CfcastError, LengthError, MissingDataError, RangeError, WindowError
from .series import SplitSpec, TimeSeries, interpolate_missing, split as split_series

DEFAULT_SPLIT = SplitSpec(date(2017, 1, 1), date(2019, 12, 31), date(2020, 1, 1), date(2020, 4, 30))
BACKTEST_SPLIT = SplitSpec(date(2017, 1, 1), date(2018, 12, 31), date(2019, 1, 1), date(2019, 4, 30))
MODEL_KINDS = ("sarima", "lstm", "gbt")


@dataclass(frozen=True)
class ModelOutput:
    mean: np.ndarray
    lower95: np.ndarray | None = None
    upper95: np.ndarray | None = None
    summary: Mapping[str, str] = field(default_factory=dict)


Forecaster = Callable[[TimeSeries, int, int], ModelOutput]


@dataclass(frozen=True)
class ModelChoice:
    kind: str
    params: Mapping = field(default_factory=dict)
    forecaster: Forecaster | None = field(default=None, compare=False, repr=False)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS + ("custom",):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "custom" and self.forecaster is None:
            raise ValueError("custom models need a forecaster")
        allowed = _ALLOWED_PARAMS.get(self.kind)
        if allowed is not None:
            unknown = set(self.params) - allowed
            if unknown:
                raise ValueError(f"unknown {self.kind} parameters: {', '.join(sorted(unknown))}")

    @classmethod
    def custom(cls, name: str, forecaster: Forecaster) -> "ModelChoice":
        return cls("custom", {}, forecaster, name)

    @property
    def label(self) -> str:
        return self.name or self.kind


_ALLOWED_PARAMS = {
    "sarima": {"spec", "grid", "s", "max_k", "include_constant", "workers"},
    "lstm": {f.name for f in fields(lstm.LstmConfig)},
    "gbt": {f.name for f in fields(trees.BoostConfig)} | {"lags", "calendar"},
}


def _sarima_forecaster(params: Mapping) -> Forecaster:
    def run(train: TimeSeries, horizon: int, seed: int) -> ModelOutput:
        spec = params.get("spec")
        s = int(params.get("s", 7))
        if spec is not None:
            fit = sarima.fit(spec, train)
            n_candidates = 1
        else:
            fit, table = sarima.grid_search(
                train, params.get("grid"), s=s, max_k=params.get("max_k", 5),
                include_constant=params.get("include_constant"), workers=params.get("workers"),
            )
            n_candidates = len(table)
        fc = sarima.forecast(fit, train, horizon)
        summary = {
            "sarima.spec": fit.spec.label(),
            "sarima.aic": repr(fit.aic),
            "sarima.sigma2": repr(fit.sigma2),
            "sarima.candidates": str(n_candidates),
            "sarima.seasonal_period": f"{fit.spec.s} (assumed)",
        }
        return ModelOutput(fc.mean, fc.lower95, fc.upper95, summary)

    return run


def _lstm_forecaster(params: Mapping) -> Forecaster:
    def run(train: TimeSeries, horizon: int, seed: int) -> ModelOutput:
        cfg = lstm.LstmConfig(**{"seed": seed, **params})
        net, curve = lstm.train(train, cfg)
        mean = lstm.forecast_recursive(net, train.values, horizon)
        summary = {
            "lstm.hidden_size": str(cfg.hidden_size),
            "lstm.window": str(cfg.window),
            "lstm.epochs": str(cfg.epochs),
            "lstm.final_train_mse": repr(curve[-1]) if curve else "nan",
            "lstm.interval": "unavailable",
        }
        return ModelOutput(mean, None, None, summary)

    return run


def _gbt_forecaster(params: Mapping) -> Forecaster:
    def run(train: TimeSeries, horizon: int, seed: int) -> ModelOutput:
        p = dict(params)
        lags = tuple(p.pop("lags", trees.DEFAULT_LAGS))
        calendar = bool(p.pop("calendar", True))
        cfg = trees.BoostConfig(**p)
        frame = trees.lag_features(train, lags, calendar)
        ens = trees.fit_boost(frame.X, frame.y, cfg, frame.names)
        mean = np.maximum(trees.forecast_lagged(ens, train, horizon, lags, calendar), 0.0)
        summary = {
            "gbt.features": ",".join(frame.names) + " (assumed)",
            "gbt.rounds": str(cfg.num_rounds),
            "gbt.max_depth": str(cfg.max_depth),
            "gbt.interval": "unavailable",
        }
        return ModelOutput(mean, None, None, summary)

    return run


def forecaster_for(model: ModelChoice) -> Forecaster:
    if model.kind == "custom":
        return model.forecaster
    return {"sarima": _sarima_forecaster, "lstm": _lstm_forecaster, "gbt": _gbt_forecaster}[model.kind](
        model.params
    )


@dataclass(frozen=True)
class DailyRow:
    date: date
    observed: float
    predicted: float
    lower95: float | None
    upper95: float | None

    @property
    def excess(self) -> float:
        return self.observed - self.predicted


@dataclass(frozen=True)
class CounterfactualReport:
    variable: str
    split: SplitSpec
    model: ModelChoice
    daily: tuple
    mean_excess: float
    total_excess: float
    pct_change: float
    se_excess: float
    n_valid: int
    n_missing: int
    summary: Mapping[str, str] = field(default_factory=dict)

    @property
    def has_interval(self) -> bool:
        return bool(self.daily) and self.daily[0].lower95 is not None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        obs = np.array([r.observed for r in self.daily])
        pred = np.array([r.predicted for r in self.daily])
        return obs, pred


def mse(observed, predicted) -> float:
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape:
        raise LengthError("observed and predicted differ in length")
    if observed.size == 0:
        raise LengthError("mse of empty sequences")
    r = observed - predicted
    return float(np.mean(r * r))


def prepare_train(train: TimeSeries, max_gap: int = 3) -> TimeSeries:
    """Interpolate short gaps; refuse a training window that still has holes."""
    filled, gaps = interpolate_missing(train, max_gap)
    if gaps:
        detail = ", ".join(f"{g.start} (+{g.length}d)" for g in gaps[:5])
        raise MissingDataError(f"{train.variable}: gaps longer than {max_gap} days remain: {detail}")
    return filled


def run_counterfactual(s: TimeSeries, split: SplitSpec, model: ModelChoice,
                       seed: int = 0, max_gap: int = 3) -> CounterfactualReport:
    """Fit ``model`` on the train window and score its forecast of the predict window.

    Missing observed days in the predict window stay in ``daily`` but are left
    out of every summary statistic.
    """
    train, target = split_series(s, split)
    train = prepare_train(train, max_gap)
    horizon = split.predict_days
    out = forecaster_for(model)(train, horizon, seed)
    mean = np.asarray(out.mean, dtype=float)
    if mean.size != horizon or not np.all(np.isfinite(mean)):
        raise CfcastError(f"{model.label}: forecaster returned {mean.size} values for horizon {horizon}")
    observed = np.asarray(target.values, dtype=float)
    valid = ~np.isnan(observed)
    if not valid.any():
        raise WindowError("predict window has no observed values")
    lo = None if out.lower95 is None else np.asarray(out.lower95, dtype=float)
    hi = None if out.upper95 is None else np.asarray(out.upper95, dtype=float)
    rows = tuple(
        DailyRow(
            split.predict_start + timedelta(days=k),
            float(observed[k]),
            float(mean[k]),
            None if lo is None else float(lo[k]),
            None if hi is None else float(hi[k]),
        )
        for k in range(horizon)
    )
    resid = observed[valid] - mean[valid]
    n = int(valid.sum())
    mean_excess = float(resid.mean())
    pred_mean = float(mean[valid].mean())
    pct = 100.0 * mean_excess / pred_mean if pred_mean != 0 else math.nan
    se = float(resid.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return CounterfactualReport(
        variable=s.variable, split=split, model=model, daily=rows,
        mean_excess=mean_excess, total_excess=float(resid.sum()), pct_change=pct,
        se_excess=se, n_valid=n, n_missing=horizon - n, summary=dict(out.summary),
    )


@dataclass(frozen=True)
class BacktestResult:
    variable: str
    model: ModelChoice
    mse: float
    split: SplitSpec
    report: CounterfactualReport | None = field(default=None, compare=False, repr=False)


def run_backtest(s: TimeSeries, model: ModelChoice, split: SplitSpec = BACKTEST_SPLIT,
                 seed: int = 0, max_gap: int = 3) -> BacktestResult:
    """Pre-intervention assessment: MSE of the forecast over a held-out historical window."""
    if split.train_start < s.start or split.predict_end > s.end:
        raise RangeError(
            f"{s.variable}: backtest needs {split.train_start}..{split.predict_end}, "
            f"series covers {s.start}..{s.end}"
        )
    report = run_counterfactual(s, split, model, seed, max_gap)
    obs, pred = report.arrays()
    valid = ~np.isnan(obs)
    return BacktestResult(s.variable, model, mse(obs[valid], pred[valid]), split, report)


@dataclass(frozen=True)
class Comparison:
    results: tuple
    failures: Mapping[str, str]


def compare_models(s: TimeSeries, models: Sequence[ModelChoice], split: SplitSpec = BACKTEST_SPLIT,
                   seed: int = 0, max_gap: int = 3) -> Comparison:
    """Backtest each model, rank ascending by MSE and record failures without stopping.

    Equal MSEs keep input order.
    """
    if not models:
        raise ValueError("need at least one model")
    ok, failures = [], {}
    for m in models:
        try:
            ok.append(run_backtest(s, m, split, seed, max_gap))
        except (CfcastError, ValueError) as exc:
            failures[m.label] = f"{type(exc).__name__}: {exc}"
    if not ok:
        raise AggregateError(f"{s.variable}: every model failed", failures)
    ranked = sorted(ok, key=lambda r: r.mse)
    return Comparison(tuple(ranked), failures)


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def report_csv(report: CounterfactualReport) -> str:
    """Daily rows: ``date,observed,predicted,lower95,upper95,excess``; blanks mark missing."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "observed", "predicted", "lower95", "upper95", "excess"])
    for r in report.daily:
        w.writerow([r.date.isoformat(), _fmt(r.observed), _fmt(r.predicted),
                    _fmt(r.lower95), _fmt(r.upper95), _fmt(r.excess)])
    return buf.getvalue()


def report_summary(report: CounterfactualReport) -> str:
    """``key = value`` block; excess statistics are this tool's own summaries."""
    sp = report.split
    lines = [
        f"variable = {report.variable}",
        f"model = {report.model.label}",
        f"train = {sp.train_start}..{sp.train_end}",
        f"predict = {sp.predict_start}..{sp.predict_end}",
        f"days_valid = {report.n_valid}",
        f"days_missing = {report.n_missing}",
        f"mean_excess = {_fmt(report.mean_excess)}",
        f"total_excess = {_fmt(report.total_excess)}",
        f"pct_change = {_fmt(report.pct_change)}",
        f"se_excess = {_fmt(report.se_excess)}",
        f"interval = {'95% gaussian' if report.has_interval else 'no interval'}",
    ]
    lines += [f"{k} = {v}" for k, v in report.summary.items()]
    return "\n".join(lines) + "\n"


def parse_summary(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
