"""Counterfactual forecasting of daily air-pollution series with SARIMA, LSTM and boosted trees."""

from .counterfactual import (
    BacktestResult,
    CounterfactualReport,
    ModelChoice,
    compare_models,
    mse,
    run_backtest,
    run_counterfactual,
)
from .series import SplitSpec, TimeSeries, load_csv

__version__ = "0.1.0"

__all__ = [
    "BacktestResult",
    "CounterfactualReport",
    "ModelChoice",
    "SplitSpec",
    "TimeSeries",
    "compare_models",
    "load_csv",
    "mse",
    "run_backtest",
    "run_counterfactual",
]
