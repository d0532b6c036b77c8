"""Deterministic Nelder-Mead minimiser used for the SARIMA likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def _safe(f, x):
    try:
        v = float(f(x))
    except (FloatingPointError, OverflowError, ZeroDivisionError, ValueError):
        return np.inf
    return v if np.isfinite(v) else np.inf


def nelder_mead(f, x0, step=0.5, xtol: float = 1e-6, maxiter: int = 2000,
                raise_on_failure: bool = True) -> SimplexResult:
    """Minimise ``f`` from ``x0`` with standard coefficients (1, 2, 0.5, 0.5).

    Non-finite or raising evaluations count as ``+inf``.  Convergence is
    declared once the simplex diameter (max vertex distance) drops below
    ``xtol``.  When ``maxiter`` runs out a :class:`ConvergenceError` is raised
    whose ``best`` attribute is the best :class:`SimplexResult` so far, unless
    ``raise_on_failure`` is false.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    evals = 0
    if n == 0:
        return SimplexResult(x0.copy(), _safe(f, x0), 0, 1, True)

    steps = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    sim = np.vstack([x0] + [x0 + steps[i] * np.eye(n)[i] for i in range(n)])
    fs = np.array([_safe(f, v) for v in sim])
    evals += n + 1

    it = 0
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        diam = float(np.max(np.linalg.norm(sim[:, None, :] - sim[None, :, :], axis=-1)))
        if diam < xtol:
            converged = True
            break
        if it >= maxiter:
            break
        it += 1

        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = _safe(f, xr)
        evals += 1
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = _safe(f, xe)
            evals += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = _safe(f, xc)
            evals += 1
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = _safe(f, xc)
            evals += 1
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
        fs[1:] = [_safe(f, v) for v in sim[1:]]
        evals += n

    result = SimplexResult(sim[0].copy(), float(fs[0]), it, evals, converged)
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"simplex did not converge in {maxiter} iterations (diameter {diam:.3g})", best=result
        )
    return result
