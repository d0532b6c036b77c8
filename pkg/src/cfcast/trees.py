"""Second-order gradient boosted regression trees with exact greedy splits.

Each round fits one tree to the per-sample first and second derivatives
(``g``, ``h``) of the loss at the current predictions.  A leaf holding the
index set ``I`` gets weight ``-G / (H + lambda)`` with ``G = sum g_i`` and
``H = sum h_i``; a split is scored by how much it lowers the regularised
objective ``-1/2 sum_j G_j^2 / (H_j + lambda) + gamma * T``.

Trees store the unshrunk optimal leaf weights.  The ensemble applies the
learning rate at prediction time: ``base_score + eta * sum_t tree_t(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DegenerateLeafError, LabelError, LengthError, SchemaError
from .series import POLLUTANTS, TimeSeries


@dataclass(frozen=True)
class BoostConfig:
    num_rounds: int = 200
    learning_rate: float = 0.3
    max_depth: int = 4
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    loss: str = "squared"

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("lambda, gamma and min_child_weight must be >= 0")
        if self.loss not in ("squared", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


class GradHess(NamedTuple):
    g: np.ndarray
    h: np.ndarray


class SplitCandidate(NamedTuple):
    feature: int
    threshold: float
    gain: float


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def grad_hess(loss: str, y, yhat) -> GradHess:
    """Derivatives of the loss with respect to the current prediction.

    ``squared`` is ``1/2 (y - yhat)^2``; ``logistic`` treats ``yhat`` as
    log-odds and requires labels in {0, 1}.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise LengthError("targets and predictions differ in length")
    if loss == "squared":
        return GradHess(yhat - y, np.ones_like(y))
    if loss == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise LabelError("logistic loss needs labels in {0, 1}")
        p = _sigmoid(yhat)
        return GradHess(p - y, p * (1.0 - p))
    raise ValueError(f"unknown loss {loss!r}")


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    if H + reg_lambda <= 0:
        raise DegenerateLeafError(f"H + lambda = {H + reg_lambda} must be positive")
    return -G / (H + reg_lambda)


def split_gain(G_L, H_L, G_R, H_R, reg_lambda: float, gamma: float):
    """Objective reduction of replacing one leaf by two, minus ``gamma``.  Vectorises over arrays."""
    G = G_L + G_R
    H = H_L + H_R
    return 0.5 * (
        G_L * G_L / (H_L + reg_lambda)
        + G_R * G_R / (H_R + reg_lambda)
        - G * G / (H + reg_lambda)
    ) - gamma


def best_split(X, g, h, reg_lambda: float = 1.0, gamma: float = 0.0,
               min_child_weight: float = 0.0) -> SplitCandidate | None:
    """Exact greedy search over every feature and every gap between sorted values.

    Thresholds sit at the midpoint of adjacent distinct values; samples with
    ``x < threshold`` go left.  Returns the highest positive-gain candidate
    whose children both have hessian sum ``>= min_child_weight``, preferring
    the lower feature index and then the lower threshold on ties (gains
    within a relative ``TIE_RTOL`` of each other), or ``None``.
    """
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if X.ndim != 2 or X.shape[0] != g.size or g.size != h.size:
        raise ValueError("X must be (n, features) with one g and h per row")
    G, H = g.sum(), h.sum()
    best: SplitCandidate | None = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        distinct = xs[1:] > xs[:-1]
        if not distinct.any():
            continue
        GL = np.cumsum(g[order])[:-1]
        HL = np.cumsum(h[order])[:-1]
        GR, HR = G - GL, H - HL
        ok = distinct & (HL >= min_child_weight) & (HR >= min_child_weight)
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = split_gain(GL, HL, GR, HR, reg_lambda, gamma)
        gains = np.where(ok & np.isfinite(gains), gains, -np.inf)
        top = float(gains.max())
        if not top > 0:
            continue
        # Equal partitions reached through different sort orders can differ by
        # rounding; gains within TIE_RTOL count as ties so the tie-break holds.
        k = int(np.argmax(gains >= top - _tie_tol(top)))
        gain = float(gains[k])
        if best is None or gain > best.gain + _tie_tol(best.gain):
            best = SplitCandidate(j, float(0.5 * (xs[k] + xs[k + 1])), gain)
    return best


TIE_RTOL = 1e-12


def _tie_tol(gain: float) -> float:
    return TIE_RTOL * max(1.0, abs(gain))


def build_tree(X, g, h, config: BoostConfig, depth: int | None = None) -> TreeNode:
    """Grow a tree greedily until ``depth`` is spent or no split has positive gain."""
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if g.size == 0:
        raise LengthError("cannot build a tree from no samples")
    budget = config.max_depth if depth is None else depth
    return _grow(X, g, h, config, budget)


def _grow(X, g, h, config, budget) -> TreeNode:
    if budget > 0 and g.size >= 2:
        cand = best_split(X, g, h, config.reg_lambda, config.gamma, config.min_child_weight)
        if cand is not None:
            mask = X[:, cand.feature] < cand.threshold
            left = _grow(X[mask], g[mask], h[mask], config, budget - 1)
            right = _grow(X[~mask], g[~mask], h[~mask], config, budget - 1)
            return Split(cand.feature, cand.threshold, cand.gain, left, right)
    return Leaf(leaf_weight(float(g.sum()), float(h.sum()), config.reg_lambda))


def apply_tree(node: TreeNode, X) -> list[int]:
    """Index of the leaf (in preorder leaf numbering) that each row lands in."""
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape[0], dtype=int)
    counter = [0]

    def walk(n, idx):
        if isinstance(n, Leaf):
            out[idx] = counter[0]
            counter[0] += 1
            return
        mask = X[idx, n.feature] < n.threshold
        walk(n.left, idx[mask])
        walk(n.right, idx[~mask])

    walk(node, np.arange(X.shape[0]))
    return out


def leaves(node: TreeNode) -> list[Leaf]:
    if isinstance(node, Leaf):
        return [node]
    return leaves(node.left) + leaves(node.right)


def internal_nodes(node: TreeNode) -> list[Split]:
    if isinstance(node, Leaf):
        return []
    return [node] + internal_nodes(node.left) + internal_nodes(node.right)


def predict_tree(node: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    weights = np.array([lf.weight for lf in leaves(node)])
    return weights[apply_tree(node, X)]


def objective_structure(node: TreeNode, X, g, h, reg_lambda: float, gamma: float) -> float:
    """``-1/2 sum_j G_j^2 / (H_j + lambda) + gamma T`` from per-leaf gradient sums."""
    idx = apply_tree(node, X)
    T = len(leaves(node))
    G = np.bincount(idx, weights=np.asarray(g, dtype=float), minlength=T)
    H = np.bincount(idx, weights=np.asarray(h, dtype=float), minlength=T)
    return float(-0.5 * np.sum(G * G / (H + reg_lambda)) + gamma * T)


def objective_direct(node: TreeNode, X, g, h, reg_lambda: float, gamma: float,
                     weights=None) -> float:
    """``sum_i [g_i w_q(i) + 1/2 h_i w_q(i)^2] + gamma T + 1/2 lambda sum_j w_j^2``.

    ``weights`` overrides the stored leaf weights (preorder), for perturbation checks.
    """
    w = np.array([lf.weight for lf in leaves(node)] if weights is None else weights, dtype=float)
    wq = w[apply_tree(node, X)]
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    return float(np.sum(g * wq + 0.5 * h * wq * wq) + gamma * w.size + 0.5 * reg_lambda * np.sum(w * w))


@dataclass(frozen=True)
class TreeEnsemble:
    base_score: float
    trees: tuple
    config: BoostConfig
    feature_names: tuple = ()

    def raw_predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.config.learning_rate * predict_tree(t, X)
        return out

    def predict(self, X) -> np.ndarray:
        """Regression output, or the class-1 probability under logistic loss."""
        raw = self.raw_predict(X)
        return _sigmoid(raw) if self.config.loss == "logistic" else raw

    def to_text(self) -> str:
        """Tree-list text format.

        Header lines ``base_score``, ``learning_rate``, ``loss``, ``features``;
        then per tree a ``tree <k>`` line followed by its nodes in preorder,
        each either ``split <feature> <threshold> <gain>`` or ``leaf <weight>``.
        """
        c = self.config
        lines = [
            f"base_score {self.base_score!r}",
            f"learning_rate {c.learning_rate!r}",
            f"loss {c.loss}",
            "features " + ",".join(self.feature_names),
        ]
        for k, t in enumerate(self.trees):
            lines.append(f"tree {k}")
            stack = [t]
            while stack:
                n = stack.pop()
                if isinstance(n, Leaf):
                    lines.append(f"leaf {n.weight!r}")
                else:
                    lines.append(f"split {n.feature} {n.threshold!r} {n.gain!r}")
                    stack.append(n.right)
                    stack.append(n.left)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, config: BoostConfig | None = None) -> "TreeEnsemble":
        lines = [ln.split(" ", 1) for ln in text.strip().splitlines()]
        header = {k: v for k, v in lines[:4]}
        cfg = config or BoostConfig(learning_rate=float(header["learning_rate"]), loss=header["loss"])
        names = tuple(n for n in header.get("features", "").split(",") if n)
        body = [ln for ln in lines[4:]]
        trees = []
        pos = 0

        def parse():
            nonlocal pos
            kind, rest = body[pos]
            pos += 1
            if kind == "leaf":
                return Leaf(float(rest))
            f, thr, gain = rest.split()
            left = parse()
            right = parse()
            return Split(int(f), float(thr), float(gain), left, right)

        while pos < len(body):
            if body[pos][0] != "tree":
                raise ValueError(f"expected 'tree', got {body[pos][0]!r}")
            pos += 1
            trees.append(parse())
        return cls(float(header["base_score"]), tuple(trees), cfg, names)


def fit_boost(X, y, config: BoostConfig = BoostConfig(),
              feature_names: Sequence[str] | None = None) -> TreeEnsemble:
    """Additive training: one tree per round on the derivatives at the running prediction."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, features) with one target per row")
    if y.size < 2:
        raise LengthError("need at least 2 rows")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("missing values must be imputed or dropped before fitting")
    if config.loss == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise LabelError("logistic loss needs labels in {0, 1}")
        m = float(y.mean())
        if m in (0.0, 1.0):
            raise LabelError("all labels belong to one class")
        base = math.log(m / (1 - m))
    else:
        base = float(y.mean())
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    pred = np.full(y.size, base)
    trees = []
    for _ in range(config.num_rounds):
        gh = grad_hess(config.loss, y, pred)
        tree = build_tree(X, gh.g, gh.h, config)
        trees.append(tree)
        pred = pred + config.learning_rate * predict_tree(tree, X)
    return TreeEnsemble(base, tuple(trees), config, names)


def feature_importance(ens: TreeEnsemble) -> dict[str, float]:
    """Total split gain per feature, normalised to sum to one; empty without splits."""
    totals: dict[int, float] = {}
    for t in ens.trees:
        for node in internal_nodes(t):
            totals[node.feature] = totals.get(node.feature, 0.0) + node.gain
    s = sum(totals.values())
    if not totals or s <= 0:
        return {}
    names = ens.feature_names
    return {names[j] if j < len(names) else f"x{j}": totals[j] / s for j in sorted(totals)}


@dataclass(frozen=True)
class InfluenceResult:
    importance: dict
    accuracy: float
    n_train: int
    n_test: int
    cutoff: float
    ensemble: TreeEnsemble = field(repr=False)


def aqi_influence(table: dict, cutoff: float = 150.0, split_fraction: float = 0.8,
                  config: BoostConfig | None = None) -> InfluenceResult:
    """Rank the six pollutants by how much they drive ``AQI > cutoff``.

    ``table`` maps variable names to aligned daily arrays or series.  Days
    with any missing value are dropped, the first ``split_fraction`` of the
    remaining days train a logistic ensemble and the rest measure accuracy.
    """
    cols = {}
    for name in POLLUTANTS + ("AQI",):
        if name not in table:
            raise SchemaError(f"missing column {name.lower().replace('.', '_')!r}")
        v = table[name]
        cols[name] = np.asarray(v.values if isinstance(v, TimeSeries) else v, dtype=float)
    n = {c.size for c in cols.values()}
    if len(n) != 1:
        raise LengthError("columns differ in length")
    X = np.column_stack([cols[p] for p in POLLUTANTS])
    aqi = cols["AQI"]
    keep = ~(np.isnan(X).any(axis=1) | np.isnan(aqi))
    X, aqi = X[keep], aqi[keep]
    labels = (aqi > cutoff).astype(float)
    if labels.min() == labels.max():
        raise LabelError(f"every day falls on one side of AQI cutoff {cutoff}; try another cutoff")
    if not 0 < split_fraction <= 1:
        raise ValueError("split_fraction must lie in (0, 1]")
    n_train = max(2, int(round(split_fraction * labels.size)))
    if labels[:n_train].min() == labels[:n_train].max():
        raise LabelError(f"training days all fall on one side of AQI cutoff {cutoff}; try another cutoff")
    cfg = config or BoostConfig(loss="logistic")
    if cfg.loss != "logistic":
        raise ValueError("aqi_influence needs a logistic-loss config")
    ens = fit_boost(X[:n_train], labels[:n_train], cfg, POLLUTANTS)
    n_test = labels.size - n_train
    if n_test:
        hits = (ens.predict(X[n_train:]) >= 0.5) == (labels[n_train:] == 1)
        acc = float(hits.mean())
    else:
        acc = math.nan
    return InfluenceResult(feature_importance(ens), acc, n_train, n_test, cutoff, ens)


DEFAULT_LAGS = (1, 2, 3, 4, 5, 6, 7, 14)


@dataclass(frozen=True)
class LagFrame:
    X: np.ndarray
    y: np.ndarray
    dates: list
    names: tuple


def _calendar(day: date) -> tuple[float, float]:
    return float(day.weekday()), float(day.timetuple().tm_yday)


def lag_features(s, lags: Sequence[int] = DEFAULT_LAGS, calendar: bool = True,
                 start: date | None = None) -> LagFrame:
    """Supervised rows ``(y_{t-l} for l in lags [, weekday, day-of-year]) -> y_t``.

    Rows whose target or any lag is missing are dropped.  ``s`` may be a
    :class:`TimeSeries` or an array; calendar features need a start date.
    """
    lags = sorted(set(int(l) for l in lags))
    if not lags or lags[0] < 1:
        raise ValueError("lags must be positive")
    if isinstance(s, TimeSeries):
        y = np.asarray(s.values, dtype=float)
        start = s.start
    else:
        y = np.asarray(s, dtype=float)
    if calendar and start is None:
        raise ValueError("calendar features need a start date")
    m = lags[-1]
    if m >= y.size:
        raise LengthError(f"largest lag {m} needs more than {y.size} values")
    names = tuple(f"lag{l}" for l in lags) + (("dow", "doy") if calendar else ())
    rows, targets, dates = [], [], []
    for t in range(m, y.size):
        feats = [y[t - l] for l in lags]
        if np.isnan(y[t]) or any(np.isnan(feats)):
            continue
        day = start + timedelta(days=t) if start is not None else None
        if calendar:
            feats.extend(_calendar(day))
        rows.append(feats)
        targets.append(y[t])
        dates.append(day)
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return LagFrame(X, np.array(targets), dates, names)


def forecast_lagged(ens: TreeEnsemble, history, horizon: int, lags: Sequence[int] = DEFAULT_LAGS,
                    calendar: bool = True, start: date | None = None) -> np.ndarray:
    """Recursive one-step forecasts: each prediction becomes a lag for the next day.

    ``history`` is the fully observed training series; ``start`` is the first
    forecast date (defaults to the day after a :class:`TimeSeries` history).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    lags = sorted(set(int(l) for l in lags))
    if isinstance(history, TimeSeries):
        buf = list(np.asarray(history.values, dtype=float))
        start = start or history.end + timedelta(days=1)
    else:
        buf = list(np.asarray(history, dtype=float))
    if len(buf) < lags[-1]:
        raise LengthError("history shorter than the largest lag")
    if calendar and start is None:
        raise ValueError("calendar features need a start date")
    out = np.empty(horizon)
    for k in range(horizon):
        feats = [buf[-l] for l in lags]
        if calendar:
            feats.extend(_calendar(start + timedelta(days=k)))
        out[k] = float(ens.predict(np.array([feats]))[0])
        buf.append(out[k])
    return out
