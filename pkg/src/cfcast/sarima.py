"""Seasonal ARIMA by conditional sum of squares.

The model on the differenced series ``w = (1-B)^d (1-B^s)^D y`` is::

    phi(B) Phi(B^s) (w_t - mu) = theta(B) Theta(B^s) e_t

with ``phi(B) = 1 - sum phi_j B^j`` and ``theta(B) = 1 + sum theta_j B^j``.
``mu`` is the process mean of ``w`` (zero without a constant).  Pre-sample
values of ``w - mu`` and ``e`` are taken as zero, so the residual recursion is
a single IIR filter.  Coefficients are searched in an unconstrained space and
mapped through partial autocorrelations, which keeps every AR polynomial
stationary and every MA polynomial invertible.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import (
    AggregateError,
    ConvergenceError,
    EvaluationError,
    FitError,
    LengthError,
    MissingDataError,
)
from .series import TimeSeries, difference, integrate
from .simplex import nelder_mead

Z95 = 1.96
RESTARTS = 3
MAX_ORDER = 5


@dataclass(frozen=True)
class SarimaSpec:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 7
    include_constant: bool = True
    max_order: int = field(default=MAX_ORDER, compare=False, repr=False)

    def __post_init__(self):
        orders = (self.p, self.d, self.q, self.P, self.D, self.Q)
        if any(int(o) != o or o < 0 for o in orders):
            raise ValueError(f"orders must be non-negative integers, got {orders}")
        if self.s < 1:
            raise ValueError("seasonal period must be >= 1")
        if self.P + self.D + self.Q > 0 and self.s < 2:
            raise ValueError("seasonal terms need a period s >= 2")
        if self.p + self.q + self.P + self.Q > self.max_order:
            raise ValueError(
                f"p+q+P+Q = {self.p + self.q + self.P + self.Q} exceeds maximum {self.max_order}"
            )

    @property
    def n_coef(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def k(self) -> int:
        """Estimated parameters counted by AIC, residual variance included."""
        return self.n_coef + int(self.include_constant) + 1

    @property
    def n_params(self) -> int:
        return self.n_coef + int(self.include_constant)

    @property
    def lost(self) -> int:
        return self.d + self.D * self.s

    def label(self) -> str:
        c = "+c" if self.include_constant else ""
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q}){self.s}{c}"

    def sort_key(self) -> tuple:
        return (self.p, self.q, self.P, self.Q, self.d, self.D)


@dataclass(frozen=True)
class SarimaFit:
    spec: SarimaSpec
    ar: tuple
    ma: tuple
    sar: tuple
    sma: tuple
    constant: float
    sigma2: float
    loglik: float
    aic: float
    n_effective: int
    iterations: int = 0

    def to_text(self) -> str:
        """Flat ``key = value`` report used by the CLI model table."""
        sp = self.spec
        lines = [
            f"spec = {sp.label()}",
            f"p = {sp.p}", f"d = {sp.d}", f"q = {sp.q}",
            f"P = {sp.P}", f"D = {sp.D}", f"Q = {sp.Q}", f"s = {sp.s}",
            f"include_constant = {str(sp.include_constant).lower()}",
        ]
        for name in ("ar", "ma", "sar", "sma"):
            for i, v in enumerate(getattr(self, name), start=1):
                lines.append(f"{name}.{i} = {v!r}")
        lines += [
            f"constant = {self.constant!r}",
            f"sigma2 = {self.sigma2!r}",
            f"loglik = {self.loglik!r}",
            f"aic = {self.aic!r}",
            f"n_effective = {self.n_effective}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Forecast:
    start: date
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.mean.size)]


def pacf_to_coeffs(x) -> np.ndarray:
    """Map unconstrained values to the coefficients of a stationary AR polynomial.

    ``tanh`` squashes each value to a partial autocorrelation in (-1, 1);
    the Durbin-Levinson recursion then builds ``phi`` such that
    ``1 - sum phi_j z^j`` has every root outside the unit circle.
    """
    r = np.tanh(np.asarray(x, dtype=float))
    phi = np.zeros(0)
    for k, rk in enumerate(r):
        phi = np.concatenate((phi - rk * phi[::-1], [rk])) if k else np.array([rk])
    return phi


def coeffs_to_pacf(phi) -> np.ndarray:
    """Inverse of :func:`pacf_to_coeffs` (step-down recursion)."""
    phi = np.asarray(phi, dtype=float).copy()
    out = np.zeros(phi.size)
    for k in range(phi.size - 1, -1, -1):
        rk = phi[k]
        if abs(rk) >= 1:
            raise ValueError("coefficients are not stationary")
        out[k] = rk
        if k:
            phi = (phi[:k] + rk * phi[:k][::-1]) / (1 - rk * rk)
    return np.arctanh(out)


def _lag_poly(coeffs, sign: float, step: int = 1) -> np.ndarray:
    poly = np.zeros(len(coeffs) * step + 1)
    poly[0] = 1.0
    for j, c in enumerate(coeffs, start=1):
        poly[j * step] = sign * c
    return poly


def polynomials(spec: SarimaSpec, ar, ma, sar, sma) -> tuple[np.ndarray, np.ndarray]:
    """Full AR and MA lag polynomials (ascending powers of B) of the ARMA part."""
    a = np.convolve(_lag_poly(ar, -1.0), _lag_poly(sar, -1.0, spec.s))
    b = np.convolve(_lag_poly(ma, 1.0), _lag_poly(sma, 1.0, spec.s))
    return a, b


def unpack(spec: SarimaSpec, params) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Split packed unconstrained parameters into constrained (ar, ma, sar, sma, constant)."""
    params = np.asarray(params, dtype=float)
    if params.size != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {params.size}")
    i = 0
    parts = []
    for n in (spec.p, spec.q, spec.P, spec.Q):
        parts.append(pacf_to_coeffs(params[i:i + n]))
        i += n
    const = float(params[i]) if spec.include_constant else 0.0
    return parts[0], parts[1], parts[2], parts[3], const


def pack(spec: SarimaSpec, ar=(), ma=(), sar=(), sma=(), constant: float = 0.0) -> np.ndarray:
    """Inverse of :func:`unpack` for valid coefficients."""
    parts = [coeffs_to_pacf(c) for c in (ar, ma, sar, sma)]
    if spec.include_constant:
        parts.append(np.array([constant], dtype=float))
    return np.concatenate(parts) if parts else np.zeros(0)


def _residuals(spec: SarimaSpec, ar, ma, sar, sma, const, w) -> np.ndarray:
    a, b = polynomials(spec, ar, ma, sar, sma)
    return lfilter(a, b, np.asarray(w, dtype=float) - const)


def css_loglik(spec: SarimaSpec, params, y) -> float:
    """Gaussian conditional log-likelihood of the differenced series ``y``.

    ``params`` holds (ar, ma, sar, sma, constant) with the four coefficient
    blocks in unconstrained space and the constant untransformed.  The
    residual variance is profiled out as the mean squared residual.
    """
    ar, ma, sar, sma, const = unpack(spec, params)
    y = np.asarray(y, dtype=float)
    with np.errstate(all="ignore"):
        e = _residuals(spec, ar, ma, sar, sma, const, y)
        sigma2 = float(np.mean(e * e))
    if not np.isfinite(sigma2):
        raise EvaluationError("non-finite residual recursion")
    if sigma2 <= 0:
        raise EvaluationError("zero residual variance")
    n = y.size
    return -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)


def _observed(series) -> np.ndarray:
    y = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    if np.isnan(y).any():
        raise MissingDataError("series has missing values; interpolate before fitting")
    return y


def _build_fit(spec, params, w, iterations) -> SarimaFit:
    ar, ma, sar, sma, const = unpack(spec, params)
    loglik = css_loglik(spec, params, w)
    e = _residuals(spec, ar, ma, sar, sma, const, w)
    sigma2 = float(np.mean(e * e))
    return SarimaFit(
        spec=spec,
        ar=tuple(float(v) for v in ar),
        ma=tuple(float(v) for v in ma),
        sar=tuple(float(v) for v in sar),
        sma=tuple(float(v) for v in sma),
        constant=const,
        sigma2=sigma2,
        loglik=loglik,
        aic=2 * spec.k - 2 * loglik,
        n_effective=int(w.size),
        iterations=iterations,
    )


def _starts(spec: SarimaSpec) -> list[np.ndarray]:
    zero = np.zeros(spec.n_params)
    if spec.n_coef == 0:
        return [zero]
    sign = np.concatenate([np.full(spec.p, 1.0), np.full(spec.q, -1.0),
                           np.full(spec.P, 1.0), np.full(spec.Q, -1.0),
                           np.zeros(int(spec.include_constant))])
    return [zero, sign, -sign]


def fit(spec: SarimaSpec, series, xtol: float = 1e-6, maxiter: int = 2000) -> SarimaFit:
    """Maximise the CSS likelihood with Nelder-Mead from deterministic starts.

    ``series`` is a fully observed :class:`TimeSeries` or 1-d array on the
    original scale.  The constant starts at the mean of the differenced
    series and is searched in units of its standard deviation.
    """
    y = _observed(series)
    if y.size <= spec.lost:
        raise LengthError(f"series of length {y.size} too short for {spec.label()}")
    w = difference(y, spec.d, spec.D, spec.s)
    if w.size < 10 * spec.k:
        raise LengthError(
            f"{w.size} differenced values, need at least {10 * spec.k} for {spec.label()}"
        )
    mean = float(w.mean())
    scale = float(w.std()) or 1.0

    def to_params(u):
        if spec.include_constant:
            u = np.array(u, dtype=float)
            u[-1] = mean + scale * u[-1]
        return u

    def objective(u):
        try:
            return -css_loglik(spec, to_params(u), w)
        except EvaluationError:
            return math.inf

    # ARMA likelihoods are multimodal near root cancellation, so the zero
    # start is followed by two mirrored starts (AR-type blocks at +1, MA-type
    # at -1 and vice versa).  Each run restarts from its own optimum until a
    # fresh simplex stops improving.  The best run wins.
    x, best_fun, iterations = None, math.inf, 0
    for x0 in _starts(spec):
        chain_fun = math.inf
        for _ in range(1 + RESTARTS):
            try:
                res = nelder_mead(objective, x0, step=0.5, xtol=xtol, maxiter=maxiter)
            except ConvergenceError as exc:
                b = exc.best
                try:
                    exc.best = _build_fit(spec, to_params(b.x), w, iterations + b.iterations)
                except EvaluationError:
                    exc.best = None
                raise
            iterations += res.iterations
            if not res.fun < chain_fun - 1e-9:
                break
            x0, chain_fun = res.x, res.fun
        if chain_fun < best_fun:
            x, best_fun = x0, chain_fun
    if x is None or not math.isfinite(best_fun):
        raise EvaluationError(f"{spec.label()}: no finite likelihood found")
    return _build_fit(spec, to_params(x), w, iterations)


def residuals(fit_: SarimaFit, series) -> np.ndarray:
    """One-step CSS residuals on the differenced scale."""
    w = difference(_observed(series), fit_.spec.d, fit_.spec.D, fit_.spec.s)
    return _residuals(fit_.spec, fit_.ar, fit_.ma, fit_.sar, fit_.sma, fit_.constant, w)


def psi_weights(fit_: SarimaFit, horizon: int) -> np.ndarray:
    """MA(infinity) weights of the integrated model, first ``horizon`` terms."""
    sp = fit_.spec
    a, b = polynomials(sp, fit_.ar, fit_.ma, fit_.sar, fit_.sma)
    for _ in range(sp.d):
        a = np.convolve(a, [1.0, -1.0])
    for _ in range(sp.D):
        a = np.convolve(a, _lag_poly([1.0], -1.0, sp.s))
    impulse = np.zeros(horizon)
    impulse[0] = 1.0
    return lfilter(b, a, impulse)


def forecast(fit_: SarimaFit, series, horizon: int, start: date | None = None) -> Forecast:
    """Point forecasts and Gaussian 95% intervals for ``horizon`` days after ``series``.

    Future shocks are set to zero on the differenced scale and the result is
    integrated back to the original scale.  The interval half-width is
    ``1.96 * sqrt(sigma2 * sum psi_j^2)`` over the first ``h`` MA(infinity)
    weights of the integrated model.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    sp = fit_.spec
    y = _observed(series)
    w = difference(y, sp.d, sp.D, sp.s)
    a, b = polynomials(sp, fit_.ar, fit_.ma, fit_.sar, fit_.sma)
    e = lfilter(a, b, w - fit_.constant)
    n = w.size
    z = np.concatenate((w - fit_.constant, np.zeros(horizon)))
    ee = np.concatenate((e, np.zeros(horizon)))
    for t in range(n, n + horizon):
        acc = 0.0
        for j in range(1, a.size):
            if t - j >= 0:
                acc -= a[j] * z[t - j]
        for j in range(1, b.size):
            if t - j >= 0:
                acc += b[j] * ee[t - j]
        z[t] = acc
    w_full = z + fit_.constant
    y_full = integrate(w_full, y[:sp.lost], sp.d, sp.D, sp.s)
    mean = y_full[-horizon:]
    psi = psi_weights(fit_, horizon)
    half = Z95 * np.sqrt(fit_.sigma2 * np.cumsum(psi * psi))
    if start is None:
        start = series.end + timedelta(days=1) if isinstance(series, TimeSeries) else None
    for arr in (mean, half):
        arr.setflags(write=False)
    return Forecast(start, mean, mean - half, mean + half)


DEFAULT_GRID = {
    "p": range(3), "q": range(3),
    "P": range(2), "Q": range(2),
    "d": range(2), "D": range(2),
}


@dataclass(frozen=True)
class GridEntry:
    spec: SarimaSpec
    fit: SarimaFit | None
    error: str | None = None

    @property
    def aic(self) -> float:
        return self.fit.aic if self.fit is not None else math.inf


def candidate_specs(grid: Mapping[str, Sequence[int]] | None = None, s: int = 7,
                    max_k: int | None = 5, include_constant: bool | None = None,
                    max_order: int = MAX_ORDER) -> list[SarimaSpec]:
    """Enumerate the specs of a grid in deterministic order.

    Missing grid keys default to ``{0}``.  With ``include_constant=None`` a
    constant is fitted only when there is no differencing.  Specs whose
    parameter count exceeds ``max_k`` are skipped.
    """
    g = {key: [0] for key in "pdqPDQ"}
    for key, vals in (DEFAULT_GRID if grid is None else grid).items():
        if key not in g:
            raise ValueError(f"unknown grid key {key!r}")
        g[key] = sorted(set(int(v) for v in vals))
    if not all(g.values()):
        raise ValueError("grid has an empty range")
    out = []
    for p, d, q, P, D, Q in itertools.product(*(g[k] for k in "pdqPDQ")):
        const = (d + D == 0) if include_constant is None else include_constant
        period = s if P + D + Q > 0 else max(s, 1)
        try:
            spec = SarimaSpec(p, d, q, P, D, Q, period, const, max_order)
        except ValueError:
            continue
        if max_k is not None and spec.k > max_k:
            continue
        out.append(spec)
    return out


def _try_fit(spec, y) -> GridEntry:
    try:
        return GridEntry(spec, fit(spec, y))
    except (FitError, LengthError, ValueError) as exc:
        return GridEntry(spec, None, f"{type(exc).__name__}: {exc}")


def select_best(entries: Sequence[GridEntry]) -> GridEntry:
    """Minimum AIC, then fewer parameters, then lexicographic (p,q,P,Q,d,D)."""
    ok = [e for e in entries if e.fit is not None]
    if not ok:
        raise AggregateError("every SARIMA candidate failed", {e.spec.label(): e.error for e in entries})
    return min(ok, key=lambda e: (e.fit.aic, e.spec.k, e.spec.sort_key()))


def grid_search(series, grid: Mapping[str, Sequence[int]] | None = None, s: int = 7,
                max_k: int | None = 5, include_constant: bool | None = None,
                workers: int | None = None) -> tuple[SarimaFit, list[GridEntry]]:
    """Fit every spec of ``grid`` and return the AIC-best fit plus the full table.

    Failing candidates are kept in the table with their error message.  With
    ``workers > 1`` candidates are fitted on a thread pool; the selection is
    independent of completion order.
    """
    y = _observed(series)
    specs = candidate_specs(grid, s, max_k, include_constant)
    if not specs:
        raise ValueError("grid produced no admissible specs")
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            table = list(pool.map(lambda sp: _try_fit(sp, y), specs))
    else:
        table = [_try_fit(sp, y) for sp in specs]
    return select_best(table).fit, table
