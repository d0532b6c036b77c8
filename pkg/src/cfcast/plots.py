"""Self-contained SVG charts.

Every chart embeds its plotted numbers in an XML comment so the figure can
be audited without the CSV.  Output carries no timestamps, so identical
inputs give identical bytes.
"""

from __future__ import annotations

import math
from datetime import date, timedelta
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
HEAT = ("#ffffcc", "#ffeda0", "#feb24c", "#fd8d3c", "#e31a1c", "#800026")


def _n(v: float) -> str:
    return f"{v:.2f}"


def _comment(label: str, values) -> str:
    body = ",".join("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)) for v in values)
    return f"<!-- {escape(label)}: {body.replace('--', '- -')} -->"


def _note(label: str, text: str) -> str:
    return f"<!-- {escape(label)}: {escape(text).replace('--', '- -')} -->"


def _doc(width: int, height: int, parts: list[str], title: str) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    t = f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>'
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', t] + parts + ["</svg>"]) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


class _Axes:
    def __init__(self, width, height, xlo, xhi, ylo, yhi, margin=(50, 20, 40, 60)):
        self.top, self.right, self.bottom, self.left = margin
        self.width, self.height = width, height
        if yhi <= ylo:
            ylo, yhi = ylo - 1, yhi + 1
        if xhi <= xlo:
            xhi = xlo + 1
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return self.left + (v - self.xlo) / (self.xhi - self.xlo) * (self.width - self.left - self.right)

    def y(self, v):
        return self.height - self.bottom - (v - self.ylo) / (self.yhi - self.ylo) * (self.height - self.top - self.bottom)

    def frame(self, ylabel: str = "") -> list[str]:
        x0, x1 = self.left, self.width - self.right
        y0, y1 = self.height - self.bottom, self.top
        parts = [f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#444"/>']
        for t in _ticks(self.ylo, self.yhi):
            yy = self.y(t)
            parts.append(f'<line x1="{x0 - 4}" y1="{_n(yy)}" x2="{x0}" y2="{_n(yy)}" stroke="#444"/>')
            parts.append(f'<text x="{x0 - 6}" y="{_n(yy + 4)}" text-anchor="end">{t:g}</text>')
        if ylabel:
            parts.append(
                f'<text x="14" y="{(y0 + y1) / 2:.1f}" transform="rotate(-90 14 {(y0 + y1) / 2:.1f})" '
                f'text-anchor="middle">{escape(ylabel)}</text>'
            )
        return parts


def _path(ax: _Axes, xs, ys) -> str:
    segs, pen = [], False
    for xv, yv in zip(xs, ys):
        if yv is None or not math.isfinite(yv):
            pen = False
            continue
        segs.append(f"{'L' if pen else 'M'}{_n(ax.x(xv))},{_n(ax.y(yv))}")
        pen = True
    return " ".join(segs)


def line_chart(dates: Sequence[date], series: Sequence[tuple[str, Sequence[float]]], title: str,
               band: tuple[Sequence[float], Sequence[float]] | None = None, ylabel: str = "",
               note: str | None = None, width: int = 800, height: int = 400) -> str:
    """Lines over a shared date axis, with an optional shaded interval band."""
    xs = [(d - dates[0]).days for d in dates] if dates else []
    pool = [v for _, ys in series for v in ys if v is not None and math.isfinite(v)]
    if band is not None:
        pool += [v for v in list(band[0]) + list(band[1]) if math.isfinite(v)]
    ylo, yhi = (min(pool), max(pool)) if pool else (0.0, 1.0)
    pad = 0.05 * (yhi - ylo) if yhi > ylo else 1.0
    ax = _Axes(width, height, 0, max(xs[-1] if xs else 1, 1), ylo - pad, yhi + pad)
    parts = [_note("dates", f"{dates[0]}..{dates[-1]}" if dates else "")]
    parts += ax.frame(ylabel)
    if band is not None:
        lo, hi = list(band[0]), list(band[1])
        parts.append(_comment("lower95", lo))
        parts.append(_comment("upper95", hi))
        pts = [f"{_n(ax.x(x))},{_n(ax.y(v))}" for x, v in zip(xs, hi)]
        pts += [f"{_n(ax.x(x))},{_n(ax.y(v))}" for x, v in reversed(list(zip(xs, lo)))]
        parts.append(f'<polygon points="{" ".join(pts)}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>')
    for k, (label, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        parts.append(_comment(label, ys))
        parts.append(f'<path d="{_path(ax, xs, ys)}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        ly = ax.top + 14 + 14 * k
        parts.append(f'<line x1="{ax.left + 10}" y1="{ly - 4}" x2="{ax.left + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ax.left + 34}" y="{ly}">{escape(label)}</text>')
    if dates:
        for frac in (0.0, 0.5, 1.0):
            i = int(round(frac * (len(dates) - 1)))
            parts.append(
                f'<text x="{_n(ax.x(xs[i]))}" y="{height - ax.bottom + 16}" text-anchor="middle">{dates[i]}</text>'
            )
    if note:
        parts.append(f'<text x="{width - ax.right}" y="{height - 6}" text-anchor="end" font-style="italic">{escape(note)}</text>')
    return _doc(width, height, parts, title)


def color_bins(values, n_bins: int = len(HEAT)) -> np.ndarray:
    """Equal-width bin edges over the finite range of ``values``; a constant range gives one bin."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0 or v.min() == v.max():
        return np.array([v.min() if v.size else 0.0] * 2)
    return np.linspace(v.min(), v.max(), n_bins + 1)


def bin_index(value: float, edges: np.ndarray) -> int:
    if edges.size <= 2 or edges[0] == edges[-1]:
        return 0
    return int(min(np.searchsorted(edges, value, side="right") - 1, edges.size - 2))


def calendar_heatmap(year: int, start: date, values: Sequence[float], edges: np.ndarray,
                     title: str) -> str:
    """One year as a week-by-weekday grid; darker cells mean higher values, grey is missing."""
    cell, left, top = 12, 40, 40
    first = date(year, 1, 1)
    n_days = (date(year + 1, 1, 1) - first).days
    width, height = left + 54 * cell + 20, top + 7 * cell + 50
    parts = [_comment("bin_edges", list(edges))]
    used = set()
    day_values = []
    for k in range(n_days):
        d = first + timedelta(days=k)
        idx = (d - start).days
        v = float(values[idx]) if 0 <= idx < len(values) else math.nan
        day_values.append(v)
        week = (k + first.weekday()) // 7
        x, y = left + week * cell, top + d.weekday() * cell
        if math.isnan(v):
            fill = "#dddddd"
        else:
            b = bin_index(v, edges)
            used.add(b)
            fill = HEAT[b] if edges.size > 2 else HEAT[0]
        parts.append(f'<rect x="{x}" y="{y}" width="{cell - 1}" height="{cell - 1}" fill="{fill}"><title>{d} {v:g}</title></rect>')
    parts.insert(1, _comment("values", day_values))
    parts.insert(2, f"<!-- bins_used: {','.join(str(b) for b in sorted(used))} -->")
    for k, name in enumerate(("Mon", "Wed", "Fri")):
        parts.append(f'<text x="{left - 4}" y="{top + (2 * k) * cell + 10}" text-anchor="end">{name}</text>')
    n_legend = max(edges.size - 1, 1)
    for b in range(n_legend):
        x = left + b * 60
        parts.append(f'<rect x="{x}" y="{height - 30}" width="14" height="14" fill="{HEAT[b] if edges.size > 2 else HEAT[0]}"/>')
        label = f"{edges[b]:.3g}-{edges[b + 1]:.3g}" if edges.size > 2 else f"{edges[0]:.3g}"
        parts.append(f'<text x="{x + 18}" y="{height - 19}">{escape(label)}</text>')
    return _doc(width, height, parts, title)


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str, width: int = 600,
              height: int = 360) -> str:
    vmax = max([v for v in values if math.isfinite(v)] + [0.0])
    ax = _Axes(width, height, 0, max(len(labels), 1), 0.0, vmax * 1.1 if vmax > 0 else 1.0)
    parts = [_note("labels", ",".join(labels)), _comment("values", values)]
    parts += ax.frame()
    slot = (width - ax.left - ax.right) / max(len(labels), 1)
    for k, (lab, v) in enumerate(zip(labels, values)):
        x0 = ax.left + k * slot + 0.15 * slot
        y = ax.y(v)
        parts.append(
            f'<rect x="{_n(x0)}" y="{_n(y)}" width="{_n(0.7 * slot)}" height="{_n(ax.y(0) - y)}" fill="{PALETTE[0]}"/>'
        )
        parts.append(f'<text x="{_n(x0 + 0.35 * slot)}" y="{height - ax.bottom + 16}" text-anchor="middle">{escape(lab)}</text>')
    return _doc(width, height, parts, title)


def tukey_stats(values) -> dict | None:
    """Five-number box statistics with Tukey hinges (median included in both halves when n is odd).

    Whiskers reach the most extreme points within 1.5 IQR of the hinges.
    """
    v = np.sort(np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float))
    n = v.size
    if n == 0:
        return None
    med = float(np.median(v))
    half = (n + 1) // 2
    q1 = float(np.median(v[:half]))
    q3 = float(np.median(v[n - half:]))
    iqr = q3 - q1
    lo_lim, hi_lim = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_lim) & (v <= hi_lim)]
    return {
        "q1": q1, "median": med, "q3": q3,
        "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
        "outliers": [float(x) for x in v if x < lo_lim or x > hi_lim],
    }


def box_plot(groups: Sequence[tuple[str, Sequence[float], Sequence[float]]], title: str,
             width: int = 700, height: int = 380) -> str:
    """Paired observed/predicted boxes per group (e.g. per month)."""
    pool = [x for _, a, b in groups for x in list(a) + list(b) if x is not None and math.isfinite(x)]
    ylo, yhi = (min(pool), max(pool)) if pool else (0.0, 1.0)
    pad = 0.05 * (yhi - ylo) if yhi > ylo else 1.0
    ax = _Axes(width, height, 0, max(len(groups), 1), ylo - pad, yhi + pad)
    parts = ax.frame()
    slot = (width - ax.left - ax.right) / max(len(groups), 1)
    for k, (label, obs, pred) in enumerate(groups):
        for j, (name, vals) in enumerate((("observed", obs), ("predicted", pred))):
            st = tukey_stats(vals)
            if st is None:
                continue
            parts.append(
                f"<!-- {escape(label)} {name}: q1={st['q1']!r} median={st['median']!r} q3={st['q3']!r} "
                f"whiskers={st['whisker_lo']!r},{st['whisker_hi']!r} outliers={len(st['outliers'])} -->"
            )
            cx = ax.left + k * slot + (0.3 + 0.4 * j) * slot
            w = 0.3 * slot
            color = PALETTE[j]
            parts.append(f'<line x1="{_n(cx)}" y1="{_n(ax.y(st["whisker_lo"]))}" x2="{_n(cx)}" y2="{_n(ax.y(st["whisker_hi"]))}" stroke="{color}"/>')
            parts.append(
                f'<rect x="{_n(cx - w / 2)}" y="{_n(ax.y(st["q3"]))}" width="{_n(w)}" '
                f'height="{_n(ax.y(st["q1"]) - ax.y(st["q3"]))}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>'
            )
            parts.append(f'<line x1="{_n(cx - w / 2)}" y1="{_n(ax.y(st["median"]))}" x2="{_n(cx + w / 2)}" y2="{_n(ax.y(st["median"]))}" stroke="{color}" stroke-width="2"/>')
            for o in st["outliers"]:
                parts.append(f'<circle cx="{_n(cx)}" cy="{_n(ax.y(o))}" r="2" fill="none" stroke="{color}"/>')
        parts.append(f'<text x="{_n(ax.left + (k + 0.5) * slot)}" y="{height - ax.bottom + 16}" text-anchor="middle">{escape(label)}</text>')
    for j, name in enumerate(("observed", "predicted")):
        parts.append(f'<rect x="{ax.left + 10 + 90 * j}" y="{ax.top + 6}" width="10" height="10" fill="{PALETTE[j]}"/>')
        parts.append(f'<text x="{ax.left + 24 + 90 * j}" y="{ax.top + 15}">{name}</text>')
    return _doc(width, height, parts, title)
