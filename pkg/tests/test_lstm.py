import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfcast.errors import LengthError, NormalizationError
from cfcast.lstm import (
    CellState,
    LstmConfig,
    LstmNet,
    cell_step,
    forecast_recursive,
    forward,
    gradient,
    load,
    loss,
    make_windows,
    predict,
    save,
    sgd_step,
    train,
)

REL_FLOOR = 1e-5


def sig(v):
    return 1 / (1 + math.exp(-v))


def fd_gradient(net, X, y, h=1e-5):
    base = net.flat()
    out = np.empty_like(base)
    for k in range(base.size):
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (loss(net.from_flat(up), X, y) - loss(net.from_flat(dn), X, y)) / (2 * h)
    return out


def flat_grads(net, grads):
    return np.concatenate([np.ravel(grads[k]) for k in net.params()])


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), REL_FLOOR)))


# cell_step

def test_zero_net_zero_state():
    net = LstmNet.zeros(3)
    st_ = cell_step(net, CellState(np.full(3, 0.7), np.zeros(3)), [0.4])
    assert st_.h.tolist() == [0, 0, 0] and st_.c.tolist() == [0, 0, 0]


def test_zero_net_halves_memory():
    net = LstmNet.zeros(1)
    st_ = cell_step(net, CellState(np.zeros(1), np.array([2.0])), [0.0])
    assert st_.c[0] == pytest.approx(1.0)
    assert st_.h[0] == pytest.approx(0.5 * math.tanh(1.0))
    assert st_.h[0] == pytest.approx(0.3808, abs=1e-4)


def test_saturated_forget_keeps_memory():
    net = LstmNet.zeros(1).with_params({"b_f": np.array([20.0])})
    st_ = cell_step(net, CellState(np.zeros(1), np.array([3.0])), [0.0])
    assert st_.c[0] == pytest.approx(3.0, abs=1e-6)


def test_single_unit_hand_oracle():
    W = {"W_f": [[0.3, -0.2]], "W_i": [[0.5, 0.4]], "W_C": [[-0.6, 0.9]], "W_o": [[0.1, 0.7]]}
    b = {"b_f": [0.1], "b_i": [-0.3], "b_C": [0.2], "b_o": [0.05]}
    net = LstmNet.zeros(1).with_params({**{k: np.array(v) for k, v in {**W, **b}.items()},
                                        "head_w": np.array([1.5]), "head_b": -0.25})
    x = 0.8
    # zero initial state: z = [h0, x] = [0, x]
    f = sig(-0.2 * x + 0.1)
    i = sig(0.4 * x - 0.3)
    g = math.tanh(0.9 * x + 0.2)
    o = sig(0.7 * x + 0.05)
    c = f * 0 + i * g
    h = o * math.tanh(c)
    pred, trace = forward(net, [x])
    assert pred == pytest.approx(1.5 * h - 0.25, abs=1e-14)
    tr = trace[0]
    assert (tr.f[0], tr.i[0], tr.g[0], tr.o[0], tr.c[0]) == pytest.approx((f, i, g, o, c), abs=1e-14)

    # second step carries h and c
    x2 = 0.1
    f2 = sig(0.3 * h - 0.2 * x2 + 0.1)
    i2 = sig(0.5 * h + 0.4 * x2 - 0.3)
    g2 = math.tanh(-0.6 * h + 0.9 * x2 + 0.2)
    o2 = sig(0.1 * h + 0.7 * x2 + 0.05)
    c2 = f2 * c + i2 * g2
    h2 = o2 * math.tanh(c2)
    assert forward(net, [x, x2])[0] == pytest.approx(1.5 * h2 - 0.25, abs=1e-14)


# forward

def test_zero_net_predicts_head_bias():
    net = LstmNet.zeros(4).with_params({"head_b": 0.37})
    assert forward(net, [0.1, 0.5, 0.9])[0] == pytest.approx(0.37)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), L=st.integers(1, 12),
       scale=st.floats(0.01, 5.0), data=st.data())
def test_gate_ranges(seed, L, scale, data):
    net = LstmNet.init_random(5, seed=seed, scale=scale)
    window = data.draw(st.lists(st.floats(0, 1), min_size=L, max_size=L))
    _, trace = forward(net, window)
    assert len(trace) == L
    for tr in trace:
        for gate in (tr.f, tr.i, tr.o):
            assert np.all((gate >= 0) & (gate <= 1))
        assert np.all(np.abs(tr.g) <= 1)
        assert np.all(np.abs(tr.h) <= 1)
        assert np.all(np.isfinite(tr.c))


def test_batched_predict_matches_single_forward():
    net = LstmNet.init_random(6, seed=3, scale=0.5)
    X = np.random.default_rng(0).uniform(size=(7, 9))
    batch = predict(net, X)
    single = [forward(net, row)[0] for row in X]
    np.testing.assert_allclose(batch, single, atol=1e-14)


def test_memory_retention_limit():
    rng = np.random.default_rng(0)
    net = LstmNet.init_random(4, seed=1, scale=0.1)
    net = net.with_params({"b_f": np.full(4, 20.0), "b_i": np.full(4, -20.0)})
    state = CellState(np.zeros(4), rng.normal(size=4))
    for x in rng.uniform(size=50):
        new = cell_step(net, state, [x])
        assert np.max(np.abs(new.c - state.c)) < 1e-6
        state = new


# make_windows

def test_make_windows_examples():
    X, t = make_windows([1, 2, 3, 4], 2)
    assert X.tolist() == [[1, 2], [2, 3]] and t.tolist() == [3, 4]
    X, t = make_windows([5, 6, 7], 2)
    assert X.shape == (1, 2)
    with pytest.raises(LengthError):
        make_windows([1, 2, 3], 3)


@given(n=st.integers(2, 60), data=st.data())
def test_make_windows_property(n, data):
    L = data.draw(st.integers(1, n - 1))
    y = np.arange(n, dtype=float)
    X, t = make_windows(y, L)
    assert X.shape == (n - L, L)
    for k in range(n - L):
        assert X[k].tolist() == y[k:k + L].tolist() and t[k] == y[k + L]


# gradient

def test_zero_net_zero_target_gradient():
    net = LstmNet.zeros(3)
    mse, grads = gradient(net, np.zeros((4, 5)), np.zeros(4))
    assert mse == 0.0
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("net_seed", range(5))
def test_gradient_matches_finite_differences(net_seed):
    net = LstmNet.init_random(4, seed=net_seed, scale=0.5, window=6)
    rng = np.random.default_rng(100 + net_seed)
    for _ in range(3):
        B = int(rng.integers(1, 8))
        X = rng.uniform(size=(B, 6))
        y = rng.uniform(size=B)
        _, grads = gradient(net, X, y)
        assert max_rel_error(flat_grads(net, grads), fd_gradient(net, X, y)) <= 1e-4


def test_unused_input_dimension_has_zero_gradient():
    net = LstmNet.init_random(3, input_size=2, seed=4, scale=0.5)
    rng = np.random.default_rng(0)
    X = np.zeros((5, 4, 2))
    X[:, :, 0] = rng.uniform(size=(5, 4))
    _, grads = gradient(net, X, rng.uniform(size=5))
    for gate in "fiCo":
        G = grads[f"W_{gate}"]
        assert np.all(G[:, -1] == 0)
        assert np.any(G[:, -2] != 0)


def test_gradient_reports_batch_loss():
    net = LstmNet.init_random(4, seed=2)
    X = np.random.default_rng(1).uniform(size=(6, 5))
    y = np.linspace(0, 1, 6)
    mse, _ = gradient(net, X, y)
    assert mse == pytest.approx(loss(net, X, y), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_small_step_descends(seed):
    rng = np.random.default_rng(seed)
    net = LstmNet.init_random(8, seed=seed)
    X, y = rng.uniform(size=(16, 10)), rng.uniform(size=16)
    before, grads = gradient(net, X, y)
    assert loss(sgd_step(net, grads, 1e-3), X, y) <= before


# train and forecast

def sine(n=600, period=50):
    return np.sin(2 * np.pi * np.arange(n) / period)


def test_epochs_zero_returns_initial_net():
    y = sine(100) + 2
    net, curve = train(y, LstmConfig(hidden_size=4, epochs=0, seed=9))
    ref = LstmNet.init_random(4, seed=9)
    assert curve == []
    for name, arr in ref.params().items():
        assert np.array_equal(arr, net.params()[name])


def test_constant_series_rejected():
    with pytest.raises(NormalizationError):
        train(np.full(60, 3.0), LstmConfig(epochs=1))


def test_short_series_rejected():
    with pytest.raises(LengthError):
        train(np.arange(20.0), LstmConfig(window=14))


def test_training_is_deterministic():
    y = sine(150) + 1
    cfg = LstmConfig(hidden_size=6, window=8, epochs=5, seed=3)
    a = train(y, cfg)
    b = train(y, cfg)
    assert a[1] == b[1]
    assert np.array_equal(a[0].flat(), b[0].flat())


def test_training_reduces_loss():
    _, curve = train(sine(200) + 1, LstmConfig(hidden_size=8, window=10, epochs=20, seed=0))
    assert curve[-1] < curve[0]


def test_constant_output_forecast():
    net = LstmNet.zeros(2, window=3, norm_min=10.0, norm_max=30.0).with_params({"head_b": 0.25})
    out = forecast_recursive(net, [11, 12, 13, 14], 4)
    np.testing.assert_allclose(out, 15.0)


def test_horizon_one_is_single_forward():
    net = LstmNet.init_random(5, seed=1, scale=0.4, window=4, norm_min=2.0, norm_max=12.0)
    tail = np.array([3.0, 7.0, 5.0, 9.0])
    expected = net.denormalize(forward(net, net.normalize(tail))[0])
    assert forecast_recursive(net, tail, 1)[0] == pytest.approx(float(expected))


def test_forecast_clamps_at_zero():
    net = LstmNet.zeros(2, window=2, norm_min=5.0, norm_max=10.0).with_params({"head_b": -3.0})
    out = forecast_recursive(net, [6, 7], 5)
    assert np.all(out == 0.0)
    unclamped = forecast_recursive(net, [6, 7], 2, clamp=False)
    np.testing.assert_allclose(unclamped, 5.0 - 15.0)


@pytest.mark.slow
def test_sine_learning_and_forecast():
    y = 2 + sine(650)  # amplitude 1, kept positive so the zero clamp never binds
    net, curve = train(y[:600], LstmConfig())
    assert curve[-1] < 0.01
    fc = forecast_recursive(net, y[:600], 50)
    assert np.mean(np.abs(fc - y[600:])) < 0.15


def test_save_load_round_trip(tmp_path):
    net = LstmNet.init_random(3, seed=5, window=7, norm_min=1.5, norm_max=80.25)
    save(net, tmp_path / "n.txt")
    back = load(tmp_path / "n.txt")
    assert back.window == 7 and back.norm_min == 1.5 and back.norm_max == 80.25
    assert np.array_equal(back.flat(), net.flat())
    assert (tmp_path / "n.txt").read_text().startswith("cfcast-lstm 1\n")
    with pytest.raises(ValueError):
        (tmp_path / "bad.txt").write_text("something else\n")
        load(tmp_path / "bad.txt")
