"""Run configuration: flat ``key = value`` files with dotted keys plus flag overrides.

Example file::

    # comments start with '#'
    input = data/wuhan.csv
    variables = NO2, PM2.5, O3
    models = sarima, lstm, gbt
    seed = 7

    [split]                      # a header prefixes the keys below it
    train_start = 2017-01-01
    train_end = 2019-12-31
    predict_end = 2020-04-30

    model.sarima.max_p = 2
    model.lstm.epochs = 100

Keys under ``split.`` drive ``counterfactual``; keys under ``backtest.``
drive ``backtest``.  Unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping

from .counterfactual import BACKTEST_SPLIT, MODEL_KINDS, DEFAULT_SPLIT, ModelChoice
from .lstm import LstmConfig
from .trees import BoostConfig
from .errors import ConfigError, RangeError, SchemaError
from .series import SplitSpec, canonical_variable

SEED_ENV = "CFCAST_SEED"

_SARIMA_KEYS = {"max_p": int, "max_d": int, "max_q": int, "max_P": int, "max_D": int, "max_Q": int,
                "max_k": int, "s": int, "workers": int}
_LSTM_KEYS = {"hidden_size": int, "window": int, "epochs": int, "learning_rate": float,
              "batch_size": int, "clip_norm": float}
_GBT_KEYS = {"num_rounds": int, "learning_rate": float, "max_depth": int, "lambda": float,
             "gamma": float, "min_child_weight": float, "lags": str, "calendar": str}
_SPLIT_FIELDS = ("train_start", "train_end", "predict_start", "predict_end")

_TOP_KEYS = {"input", "variables", "models", "seed", "out_dir", "max_gap",
             "importance.cutoff", "importance.split_fraction", "importance.rounds",
             "importance.max_depth"}
_TOP_KEYS |= {f"split.{f}" for f in _SPLIT_FIELDS} | {f"backtest.{f}" for f in _SPLIT_FIELDS}
_TOP_KEYS |= {f"model.sarima.{k}" for k in _SARIMA_KEYS}
_TOP_KEYS |= {f"model.lstm.{k}" for k in _LSTM_KEYS}
_TOP_KEYS |= {f"model.gbt.{k}" for k in _GBT_KEYS}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if section:
            key = f"{section}.{key}"
        if key not in _TOP_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def read_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_text(text, str(p))


@dataclass(frozen=True)
class RunConfig:
    input: Path | None = None
    variables: tuple = ()
    models: tuple = ("sarima", "lstm", "gbt")
    split: SplitSpec = DEFAULT_SPLIT
    backtest: SplitSpec = BACKTEST_SPLIT
    seed: int = 0
    out_dir: Path = Path("out")
    max_gap: int = 3
    sarima: Mapping = field(default_factory=dict)
    lstm: Mapping = field(default_factory=dict)
    gbt: Mapping = field(default_factory=dict)
    importance: Mapping = field(default_factory=dict)

    def model_choices(self) -> list[ModelChoice]:
        return [model_choice(kind, self) for kind in self.models]


def _convert(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def _split(values: Mapping[str, str], prefix: str, default: SplitSpec) -> SplitSpec:
    parts = {}
    for f in _SPLIT_FIELDS:
        raw = values.get(f"{prefix}.{f}")
        if raw is None:
            continue
        try:
            parts[f] = date.fromisoformat(raw)
        except ValueError:
            raise ConfigError(f"{prefix}.{f}: not an ISO date: {raw!r}") from None
    if not parts:
        return default
    train_start = parts.get("train_start", default.train_start)
    train_end = parts.get("train_end", default.train_end)
    predict_start = parts.get("predict_start")
    if predict_start is None:
        predict_start = train_end + (default.predict_start - default.train_end)
    predict_end = parts.get("predict_end", default.predict_end)
    try:
        return SplitSpec(train_start, train_end, predict_start, predict_end)
    except RangeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def build(values: Mapping[str, str], env: Mapping[str, str] | None = None) -> RunConfig:
    """Turn merged string settings into a validated :class:`RunConfig`."""
    env = os.environ if env is None else env
    unknown = set(values) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    seed_raw = values.get("seed", env.get(SEED_ENV, "0"))
    seed = _convert("seed", seed_raw, int)
    try:
        variables = tuple(canonical_variable(v) for v in _listing(values.get("variables", "")))
    except SchemaError as exc:
        raise ConfigError(str(exc)) from None
    models = tuple(m.lower() for m in _listing(values.get("models", "sarima,lstm,gbt")))
    for m in models:
        if m not in MODEL_KINDS:
            raise ConfigError(f"unknown model {m!r}; choose from {', '.join(MODEL_KINDS)}")
    sections = {}
    for name, keys in (("sarima", _SARIMA_KEYS), ("lstm", _LSTM_KEYS), ("gbt", _GBT_KEYS)):
        sections[name] = {
            k: _convert(f"model.{name}.{k}", values[f"model.{name}.{k}"], kind)
            for k, kind in keys.items() if f"model.{name}.{k}" in values
        }
    imp = {}
    for k, kind in (("cutoff", float), ("split_fraction", float), ("rounds", int), ("max_depth", int)):
        if f"importance.{k}" in values:
            imp[k] = _convert(f"importance.{k}", values[f"importance.{k}"], kind)
    inp = values.get("input")
    cfg = RunConfig(
        input=Path(inp) if inp else None,
        variables=variables,
        models=models,
        split=_split(values, "split", DEFAULT_SPLIT),
        backtest=_split(values, "backtest", BACKTEST_SPLIT),
        seed=seed,
        out_dir=Path(values.get("out_dir", "out")),
        max_gap=_convert("max_gap", values.get("max_gap", "3"), int),
        sarima=sections["sarima"],
        lstm=sections["lstm"],
        gbt=sections["gbt"],
        importance=imp,
    )
    # Build every model once so bad hyperparameters fail as config errors.
    try:
        for m in cfg.model_choices():
            if m.kind == "lstm":
                LstmConfig(**m.params)
            elif m.kind == "gbt":
                BoostConfig(**{k: v for k, v in m.params.items() if k not in ("lags", "calendar")})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _listing(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def model_choice(kind: str, cfg: RunConfig) -> ModelChoice:
    if kind == "sarima":
        sp = dict(cfg.sarima)
        grid = {}
        for order, default in (("p", 2), ("d", 1), ("q", 2), ("P", 1), ("D", 1), ("Q", 1)):
            grid[order] = range(sp.pop(f"max_{order}", default) + 1)
        return ModelChoice("sarima", {"grid": grid, **sp})
    if kind == "lstm":
        return ModelChoice("lstm", dict(cfg.lstm))
    if kind == "gbt":
        p = dict(cfg.gbt)
        if "lambda" in p:
            p["reg_lambda"] = p.pop("lambda")
        if "lags" in p:
            try:
                p["lags"] = tuple(int(x) for x in _listing(p["lags"]))
            except ValueError:
                raise ConfigError("model.gbt.lags: expected comma-separated integers") from None
        if "calendar" in p:
            p["calendar"] = p["calendar"].lower() in ("1", "true", "yes", "on")
        return ModelChoice("gbt", p)
    raise ConfigError(f"unknown model {kind!r}")
