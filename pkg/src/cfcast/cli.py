"""Command-line front end.

Subcommands ``inspect``, ``importance``, ``backtest`` and ``counterfactual``
each read an optional ``--config`` file and apply flag overrides on top.
Exit status: 0 success, 2 configuration, 3 input data, 4 model fitting,
5 output I/O, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from datetime import date
from pathlib import Path
from typing import Sequence

from . import config as cfgmod
from . import plots
from .counterfactual import (
    BacktestResult,
    ModelChoice,
    report_csv,
    report_summary,
    run_backtest,
    run_counterfactual,
)
from .errors import AggregateError, CfcastError, ConfigError, OutputError
from .series import POLLUTANTS, SplitSpec, column_key, load_csv, load_table, read_table, weekly_mean
from .trees import BoostConfig, aqi_influence

DEFAULT_TARGETS = ("NO2", "PM2.5", "O3")

EPILOG = """\
exit status:
  0  success
  2  configuration error (bad flag, key or date)
  3  input data error (missing column, bad row, gaps, labels)
  4  model fitting error (every candidate or model failed)
  5  output error (directory not writable)

The seed falls back to the CFCAST_SEED environment variable, then 0.
"""


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None


def _fmt(v: float) -> str:
    return "" if v != v else repr(float(v))


def _require_input(cfg) -> Path:
    if cfg.input is None:
        raise ConfigError("no input file; pass --input or set 'input' in the config")
    if not cfg.input.exists():
        raise ConfigError(f"input file {cfg.input} does not exist")
    return cfg.input


def _token(variable: str) -> str:
    return column_key(variable)


# inspect ------------------------------------------------------------------

def weekly_csv(table: dict) -> str:
    names = list(table)
    weeks = {v: weekly_mean(s) for v, s in table.items()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["week_start"] + [_token(v) for v in names])
    first = weeks[names[0]]
    for k, (start, _) in enumerate(first):
        w.writerow([start.isoformat()] + [_fmt(weeks[v][k][1]) for v in names])
    return buf.getvalue()


def cmd_inspect(cfg) -> list[Path]:
    path = _require_input(cfg)
    if cfg.variables:
        names = list(cfg.variables)
    else:
        _, data = read_table(path)
        names = list(data)
    table = load_table(path, names)
    out = cfg.out_dir
    written = []
    for var, s in table.items():
        edges = plots.color_bins(s.values)
        for year in range(s.start.year, s.end.year + 1):
            p = out / f"heatmap_{_token(var)}_{year}.svg"
            write_atomic(p, plots.calendar_heatmap(year, s.start, s.values, edges, f"{var} {year}"))
            written.append(p)
    p = out / "weekly_means.csv"
    write_atomic(p, weekly_csv(table))
    written.append(p)
    first = next(iter(table.values()))
    week_dates = [d for d, _ in weekly_mean(first)]
    lines = [(var, [m for _, m in weekly_mean(s)]) for var, s in table.items()]
    p = out / "weekly_means.svg"
    write_atomic(p, plots.line_chart(week_dates, lines, "Weekly mean concentrations"))
    written.append(p)
    return written


# importance ---------------------------------------------------------------

def cmd_importance(cfg) -> list[Path]:
    path = _require_input(cfg)
    table = load_table(path, POLLUTANTS + ("AQI",))
    imp = cfg.importance
    boost = BoostConfig(
        num_rounds=imp.get("rounds", 200), max_depth=imp.get("max_depth", 4), loss="logistic"
    )
    res = aqi_influence(table, imp.get("cutoff", 150.0), imp.get("split_fraction", 0.8), boost)
    ranked = sorted(POLLUTANTS, key=lambda p: (-res.importance.get(p, 0.0), POLLUTANTS.index(p)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "importance"])
    for p in ranked:
        w.writerow([p, repr(float(res.importance.get(p, 0.0)))])
    out = cfg.out_dir
    files = [out / "importance.csv", out / "importance.svg", out / "importance_summary.txt"]
    write_atomic(files[0], buf.getvalue())
    write_atomic(files[1], plots.bar_chart(ranked, [res.importance.get(p, 0.0) for p in ranked],
                                           f"Influence on AQI > {res.cutoff:g} (normalised gain)"))
    summary = [
        f"cutoff = {res.cutoff!r}",
        f"accuracy = {_fmt(res.accuracy)}",
        f"n_train = {res.n_train}",
        f"n_test = {res.n_test}",
        f"top_feature = {ranked[0]}",
    ]
    write_atomic(files[2], "\n".join(summary) + "\n")
    return files


# backtest -----------------------------------------------------------------

MSE_FIELDS = ["variable", "model", "mse", "train_start", "train_end", "predict_start", "predict_end", "status"]


def mse_table_csv(cells: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MSE_FIELDS)
    for var, label, split, result in cells:
        mse = _fmt(result.mse) if isinstance(result, BacktestResult) else ""
        status = "ok" if isinstance(result, BacktestResult) else f"FAIL({result})"
        w.writerow([var, label, mse, split.train_start, split.train_end, split.predict_start,
                    split.predict_end, status])
    return buf.getvalue()


def read_mse_table(text: str) -> list[BacktestResult]:
    """Parse the backtest CSV back into results (successful cells only)."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["status"] != "ok":
            continue
        split = SplitSpec(*(date.fromisoformat(row[k]) for k in MSE_FIELDS[3:7]))
        out.append(BacktestResult(row["variable"], ModelChoice(row["model"]), float(row["mse"]), split))
    return out


def mse_table_text(cells: list, variables: Sequence[str], labels: Sequence[str]) -> str:
    lookup = {(v, m): r for v, m, _, r in cells}
    header = [""] + list(labels)
    rows = [header]
    for v in variables:
        row = [v]
        for m in labels:
            r = lookup.get((v, m))
            row.append(f"{r.mse:.2f}" if isinstance(r, BacktestResult) else f"FAIL({r})")
        rows.append(row)
    widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
    lines = []
    for r in rows:
        cells_ = [r[0].ljust(widths[0])] + [c.rjust(widths[k]) for k, c in enumerate(r[1:], start=1)]
        lines.append("  ".join(cells_).rstrip())
    return "Mean squared error\n" + "\n".join(lines) + "\n"


def _short(exc: Exception) -> str:
    msg = str(exc).replace("\n", " ").replace(",", ";")
    return f"{type(exc).__name__}: {msg[:120]}"


def cmd_backtest(cfg) -> list[Path]:
    path = _require_input(cfg)
    variables = list(cfg.variables or DEFAULT_TARGETS)
    models = cfg.model_choices()
    cells = []
    out = cfg.out_dir
    written = []
    for var in variables:
        try:
            s = load_csv(path, var)
        except CfcastError as exc:
            for m in models:
                cells.append((var, m.label, cfg.backtest, _short(exc)))
            continue
        for m in models:
            try:
                res = run_backtest(s, m, cfg.backtest, cfg.seed, cfg.max_gap)
            except (CfcastError, ValueError) as exc:
                cells.append((var, m.label, cfg.backtest, _short(exc)))
                continue
            cells.append((var, m.label, cfg.backtest, res))
            stem = f"backtest_{_token(var)}_{m.label}"
            written += _write_run(out, stem, res.report, f"{var} {m.label} backtest (MSE {res.mse:.2f})")
    if not any(isinstance(c[3], BacktestResult) for c in cells):
        raise AggregateError("every backtest cell failed", {f"{v}/{m}": r for v, m, _, r in cells})
    p = out / "backtest_mse.csv"
    write_atomic(p, mse_table_csv(cells))
    written.append(p)
    p = out / "backtest_mse.txt"
    write_atomic(p, mse_table_text(cells, variables, [m.label for m in models]))
    written.append(p)
    return written


# counterfactual -----------------------------------------------------------

def _write_run(out: Path, stem: str, report, title: str, box: bool = False) -> list[Path]:
    dates = [r.date for r in report.daily]
    obs, pred = report.arrays()
    band = None
    note = None
    if report.has_interval:
        band = ([r.lower95 for r in report.daily], [r.upper95 for r in report.daily])
    else:
        note = "no interval"
    files = [out / f"{stem}.csv", out / f"{stem}.svg"]
    write_atomic(files[0], report_csv(report))
    write_atomic(files[1], plots.line_chart(
        dates, [("observed", list(obs)), ("predicted", list(pred))], title, band=band,
        ylabel=report.variable, note=note,
    ))
    if box:
        months: dict[str, tuple[list, list]] = {}
        for r in report.daily:
            key = f"{r.date.year}-{r.date.month:02d}"
            months.setdefault(key, ([], []))
            months[key][0].append(r.observed)
            months[key][1].append(r.predicted)
        groups = [(k, o, p) for k, (o, p) in months.items()]
        p = out / f"{stem}_box.svg"
        write_atomic(p, plots.box_plot(groups, f"{title}: monthly observed vs predicted"))
        files.append(p)
    return files


def cmd_counterfactual(cfg) -> list[Path]:
    path = _require_input(cfg)
    variables = list(cfg.variables or DEFAULT_TARGETS)
    out = cfg.out_dir
    written = []
    for var in variables:
        s = load_csv(path, var)
        for m in cfg.model_choices():
            report = run_counterfactual(s, cfg.split, m, cfg.seed, cfg.max_gap)
            stem = f"cf_{_token(var)}_{m.label}"
            written += _write_run(out, stem, report, f"{var} {m.label} counterfactual", box=True)
            p = out / f"{stem}_summary.txt"
            write_atomic(p, report_summary(report))
            written.append(p)
    return written


COMMANDS = {
    "inspect": cmd_inspect,
    "importance": cmd_importance,
    "backtest": cmd_backtest,
    "counterfactual": cmd_counterfactual,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="cfcast",
        description="Counterfactual forecasting of daily air-pollution series.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "inspect": "calendar heatmaps and weekly-mean chart per variable",
        "importance": "pollutant influence on AQI above a cutoff (logistic boosted trees)",
        "backtest": "model x variable MSE table on a pre-intervention holdout",
        "counterfactual": "post-intervention forecasts, excess summaries and plots",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--input", help="input CSV (date column plus variable columns)")
        p.add_argument("--variable", action="append", help="variable to analyse; repeat or comma-separate")
        p.add_argument("--model", action="append", help="sarima, lstm or gbt; repeat or comma-separate")
        for flag in ("train-start", "train-end", "predict-start", "predict-end"):
            p.add_argument(f"--{flag}", metavar="YYYY-MM-DD",
                           help="window boundary (backtest window for 'backtest', else the counterfactual split)")
        p.add_argument("--seed", help="random seed (default: $CFCAST_SEED or 0)")
        p.add_argument("--out-dir", help="output directory (default: out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, e.g. model.lstm.epochs=50")
    return parser


def resolve_config(args, env=None) -> "cfgmod.RunConfig":
    values = cfgmod.read_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if args.input:
        values["input"] = args.input
    if args.variable:
        values["variables"] = ",".join(args.variable)
    if args.model:
        values["models"] = ",".join(args.model)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out_dir:
        values["out_dir"] = args.out_dir
    prefix = "backtest" if args.command == "backtest" else "split"
    for flag in ("train_start", "train_end", "predict_start", "predict_end"):
        v = getattr(args, flag)
        if v:
            values[f"{prefix}.{flag}"] = v
    return cfgmod.build(values, env)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        files = COMMANDS[args.command](cfg)
    except CfcastError as exc:
        print(f"cfcast: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cfcast: error: {exc}", file=sys.stderr)
        return OutputError.exit_code
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
