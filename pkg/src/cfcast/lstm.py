"""Single-layer LSTM regressor trained by full backpropagation through time.

Gate equations, with ``z_t = [h_{t-1}, x_t]``::

    f_t = sigmoid(W_f z_t + b_f)        forget gate
    i_t = sigmoid(W_i z_t + b_i)        input gate
    g_t = tanh(W_C z_t + b_C)           candidate memory
    c_t = f_t * c_{t-1} + i_t * g_t
    o_t = sigmoid(W_o z_t + b_o)        output gate
    h_t = o_t * tanh(c_t)

The prediction for a window is ``head_w . h_L + head_b`` on the min-max
normalised scale.  Everything is vectorised over the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DivergenceError, LengthError, MissingDataError, NormalizationError
from .series import TimeSeries

FORMAT_VERSION = 1
GATES = ("f", "i", "C", "o")
PARAM_ORDER = ("W_f", "W_i", "W_C", "W_o", "b_f", "b_i", "b_C", "b_o", "head_w", "head_b")


def sigmoid(x):
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LstmNet:
    hidden_size: int
    input_size: int
    W_f: np.ndarray = field(repr=False)
    W_i: np.ndarray = field(repr=False)
    W_C: np.ndarray = field(repr=False)
    W_o: np.ndarray = field(repr=False)
    b_f: np.ndarray = field(repr=False)
    b_i: np.ndarray = field(repr=False)
    b_C: np.ndarray = field(repr=False)
    b_o: np.ndarray = field(repr=False)
    head_w: np.ndarray = field(repr=False)
    head_b: float = 0.0
    window: int = 14
    norm_min: float = 0.0
    norm_max: float = 1.0

    def __post_init__(self):
        H, n_in = self.hidden_size, self.input_size
        for name in PARAM_ORDER[:-1]:
            arr = np.array(getattr(self, name), dtype=float)
            expected = (H, H + n_in) if name.startswith("W") else (H,)
            if arr.shape != expected:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "head_b", float(self.head_b))
        if not np.isfinite(self.head_b):
            raise ValueError("head_b is not finite")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.norm_max > self.norm_min:
            raise NormalizationError("norm_max must exceed norm_min")

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int = 1, **kw) -> "LstmNet":
        H, n_in = hidden_size, input_size
        mats = {f"W_{g}": np.zeros((H, H + n_in)) for g in GATES}
        vecs = {f"b_{g}": np.zeros(H) for g in GATES}
        return cls(H, n_in, **mats, **vecs, head_w=np.zeros(H), **kw)

    @classmethod
    def init_random(cls, hidden_size: int, input_size: int = 1, seed: int = 0,
                    scale: float = 0.08, forget_bias: float = 1.0, **kw) -> "LstmNet":
        rng = np.random.default_rng(seed)
        H, n_in = hidden_size, input_size
        params = {}
        for name in PARAM_ORDER:
            shape = (H, H + n_in) if name.startswith("W") else (H,) if name != "head_b" else ()
            params[name] = rng.uniform(-scale, scale, size=shape)
        params["b_f"] = params["b_f"] * 0 + forget_bias
        params["head_b"] = float(params["head_b"])
        return cls(H, n_in, **params, **kw)

    def params(self) -> dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name), dtype=float) for name in PARAM_ORDER}

    def with_params(self, params: dict) -> "LstmNet":
        kw = {k: params[k] for k in PARAM_ORDER if k in params}
        if "head_b" in kw:
            kw["head_b"] = float(np.asarray(kw["head_b"]))
        return replace(self, **kw)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.params().values()])

    def from_flat(self, vec) -> "LstmNet":
        vec = np.asarray(vec, dtype=float)
        out, i = {}, 0
        for name, arr in self.params().items():
            n = arr.size
            out[name] = vec[i:i + n].reshape(arr.shape)
            i += n
        return self.with_params(out)

    def normalize(self, values):
        return (np.asarray(values, dtype=float) - self.norm_min) / (self.norm_max - self.norm_min)

    def denormalize(self, values):
        return np.asarray(values, dtype=float) * (self.norm_max - self.norm_min) + self.norm_min


class CellState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class StepTrace(NamedTuple):
    z: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _step(net: LstmNet, h, c, x):
    z = np.concatenate((h, x), axis=-1)
    f = sigmoid(z @ net.W_f.T + net.b_f)
    i = sigmoid(z @ net.W_i.T + net.b_i)
    g = np.tanh(z @ net.W_C.T + net.b_C)
    o = sigmoid(z @ net.W_o.T + net.b_o)
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return StepTrace(z, f, i, g, o, c_new, h_new)


def cell_step(net: LstmNet, state: CellState, x) -> CellState:
    """Advance one time step for a single sample."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (net.input_size,):
        raise ValueError(f"input has shape {x.shape}, expected ({net.input_size},)")
    tr = _step(net, np.asarray(state.h, dtype=float), np.asarray(state.c, dtype=float), x)
    return CellState(tr.h, tr.c)


def _as_batch(windows, input_size: int) -> np.ndarray:
    X = np.asarray(windows, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim == 2:
        X = X[:, :, None] if input_size == 1 else X[None, :, :]
    if X.shape[-1] != input_size:
        raise ValueError(f"window feature size {X.shape[-1]} does not match input_size {input_size}")
    return X


def _run(net: LstmNet, X: np.ndarray) -> tuple[np.ndarray, list[StepTrace]]:
    B, L, _ = X.shape
    H = net.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    trace = []
    for t in range(L):
        tr = _step(net, h, c, X[:, t, :])
        trace.append(tr)
        h, c = tr.h, tr.c
    return h @ net.head_w + net.head_b, trace


def forward(net: LstmNet, window) -> tuple[float, list[StepTrace]]:
    """Run one normalised window from a zero state; returns prediction and per-step trace."""
    X = _as_batch(window, net.input_size)
    if X.shape[0] != 1:
        raise ValueError("forward takes a single window; use predict for batches")
    pred, trace = _run(net, X)
    return float(pred[0]), [StepTrace(*(a[0] for a in tr)) for tr in trace]


def predict(net: LstmNet, windows) -> np.ndarray:
    """Normalised-scale predictions for a batch of windows."""
    return _run(net, _as_batch(windows, net.input_size))[0]


def loss(net: LstmNet, windows, targets) -> float:
    r = predict(net, windows) - np.asarray(targets, dtype=float)
    return float(np.mean(r * r))


def gradient(net: LstmNet, windows, targets) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error of a batch and its exact gradient for every parameter.

    Reverse accumulation through the gate equations over the full window.
    """
    X = _as_batch(windows, net.input_size)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.shape[0] == 0 or X.shape[0] != y.size:
        raise ValueError("batch must be non-empty with one target per window")
    B = X.shape[0]
    H = net.hidden_size
    pred, trace = _run(net, X)
    resid = pred - y
    mse = float(np.mean(resid * resid))

    dpred = 2.0 * resid / B
    h_last = trace[-1].h
    grads = {name: np.zeros_like(arr) for name, arr in net.params().items()}
    grads["head_w"] = h_last.T @ dpred
    grads["head_b"] = np.asarray(dpred.sum())

    dh = np.outer(dpred, net.head_w)
    dc = np.zeros((B, H))
    for t in range(len(trace) - 1, -1, -1):
        tr = trace[t]
        c_prev = trace[t - 1].c if t else np.zeros((B, H))
        tc = np.tanh(tr.c)
        do = dh * tc
        dc = dc + dh * tr.o * (1.0 - tc * tc)
        da_f = dc * c_prev * tr.f * (1.0 - tr.f)
        da_i = dc * tr.g * tr.i * (1.0 - tr.i)
        da_g = dc * tr.i * (1.0 - tr.g * tr.g)
        da_o = do * tr.o * (1.0 - tr.o)
        dz = np.zeros_like(tr.z)
        for gate, da in zip(GATES, (da_f, da_i, da_g, da_o)):
            grads[f"W_{gate}"] += da.T @ tr.z
            grads[f"b_{gate}"] += da.sum(axis=0)
            dz += da @ getattr(net, f"W_{gate}")
        dh = dz[:, :H]
        dc = dc * tr.f
    return mse, grads


def make_windows(y, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Supervised pairs ``(y[t-L:t], y[t])`` for every valid ``t`` in time order."""
    y = np.asarray(y, dtype=float)
    if L < 1:
        raise ValueError("window length must be >= 1")
    if y.size <= L:
        raise LengthError(f"series of length {y.size} too short for window {L}")
    idx = np.arange(L)[None, :] + np.arange(y.size - L)[:, None]
    return y[idx], y[L:].copy()


@dataclass(frozen=True)
class LstmConfig:
    hidden_size: int = 32
    window: int = 14
    epochs: int = 200
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0


def clip_global(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(net: LstmNet, grads: dict, lr: float) -> LstmNet:
    return net.with_params({k: v - lr * grads[k] for k, v in net.params().items()})


def train(series, config: LstmConfig = LstmConfig()) -> tuple[LstmNet, list[float]]:
    """Fit a net to a fully observed series by mini-batch gradient descent.

    The series is min-max normalised with its own range.  Each epoch visits
    the windows in a seeded random order; the returned loss curve holds the
    full-data MSE after every epoch.
    """
    y = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    if np.isnan(y).any():
        raise MissingDataError("series has missing values; interpolate before training")
    if y.size <= config.window + 10:
        raise LengthError(f"series of length {y.size} too short for window {config.window}")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise NormalizationError("constant series cannot be min-max normalised")
    net = LstmNet.init_random(
        config.hidden_size, 1, seed=config.seed,
        window=config.window, norm_min=lo, norm_max=hi,
    )
    X, t = make_windows(net.normalize(y), config.window)
    rng = np.random.default_rng(config.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        return _epochs(net, X, t, rng, config)


def _epochs(net, X, t, rng, config) -> tuple[LstmNet, list[float]]:
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = gradient(net, X[idx], t[idx])
            clip_global(grads, config.clip_norm)
            try:
                net = sgd_step(net, grads, config.learning_rate)
            except ValueError:
                raise DivergenceError(epoch) from None
        epoch_loss = loss(net, X, t)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch)
        curve.append(epoch_loss)
    return net, curve


def forecast_recursive(net: LstmNet, tail, horizon: int, clamp: bool = True) -> np.ndarray:
    """Roll one-step predictions forward ``horizon`` days from the last ``window`` values.

    ``tail`` is on the original scale; the output is denormalised and, with
    ``clamp``, floored at zero.  Clamped values are what gets fed back.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    tail = np.asarray(tail, dtype=float)
    if tail.size < net.window:
        raise LengthError(f"need the last {net.window} observations, got {tail.size}")
    buf = list(net.normalize(tail[-net.window:]))
    floor = float(net.normalize(0.0))
    out = np.empty(horizon)
    for k in range(horizon):
        p = float(predict(net, np.asarray(buf[-net.window:]))[0])
        if clamp and p < floor:
            p = floor
        out[k] = p
        buf.append(p)
    return net.denormalize(out)


def save(net: LstmNet, path) -> None:
    """Write a versioned text parameter file.

    Layout: a ``cfcast-lstm <version>`` line, then ``key value`` lines for
    hidden_size, input_size, window, norm_min, norm_max, then one line per
    parameter in ``PARAM_ORDER`` holding its name followed by its entries in
    row-major order.  Floats use ``repr`` so the file round-trips exactly.
    """
    lines = [f"cfcast-lstm {FORMAT_VERSION}"]
    for key in ("hidden_size", "input_size", "window"):
        lines.append(f"{key} {getattr(net, key)}")
    for key in ("norm_min", "norm_max"):
        lines.append(f"{key} {getattr(net, key)!r}")
    for name, arr in net.params().items():
        lines.append(name + " " + " ".join(repr(float(v)) for v in np.ravel(arr)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path) -> LstmNet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split()[:1] != ["cfcast-lstm"]:
        raise ValueError(f"{path}: not an LSTM parameter file")
    version = int(lines[0].split()[1])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    fields = {}
    for line in lines[1:]:
        key, *vals = line.split()
        fields[key] = vals
    H = int(fields["hidden_size"][0])
    n_in = int(fields["input_size"][0])
    params = {}
    for name in PARAM_ORDER:
        vals = np.array([float(v) for v in fields[name]])
        shape = (H, H + n_in) if name.startswith("W") else (H,) if name != "head_b" else ()
        params[name] = vals.reshape(shape)
    params["head_b"] = float(params["head_b"])
    return LstmNet(
        H, n_in, **params,
        window=int(fields["window"][0]),
        norm_min=float(fields["norm_min"][0]),
        norm_max=float(fields["norm_max"][0]),
    )
