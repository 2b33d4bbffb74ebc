import math

import numpy as np
import pytest

from oracles import central_difference, conv1d_loops, lstm_loops, max_relative_error
from rulnet.errors import ShapeError
from rulnet.nn import layers as L

SEEDS = range(20)
TOL = 1e-4


def gradcheck(forward, backward, arrays, rng):
    """Compare backward() against central differences of sum(R * forward())."""
    out = forward()
    weights = rng.normal(size=np.shape(out))

    def scalar():
        return float(np.sum(weights * forward()))

    analytic = backward(weights)
    worst = 0.0
    for name, arr in arrays.items():
        numeric = central_difference(scalar, arr)
        worst = max(worst, max_relative_error(analytic[name], numeric))
    return worst


# --- conv1d -------------------------------------------------------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 3))
    k = rng.normal(size=(3, 3, 4))

    def fwd():
        return L.conv1d_forward(x, k)[0]

    def bwd(dy):
        dx, g = L.conv1d_backward(dy, L.conv1d_forward(x, k)[1])
        return {"x": dx, "k": g["kernel"]}

    assert gradcheck(fwd, bwd, {"x": x, "k": k}, rng) < TOL


def test_conv1d_examples():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    ident = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    assert L.conv1d_forward(x, ident)[0].ravel().tolist() == [1.0, 2.0, 3.0]
    ones = np.ones((3, 1, 1))
    assert L.conv1d_forward(x, ones)[0].ravel().tolist() == [3.0, 6.0, 5.0]
    with pytest.raises(ShapeError):
        L.conv1d_forward(np.zeros((1, 3, 2)), ones)


def test_conv1d_matches_loops():
    rng = np.random.default_rng(100)
    for _ in range(100):
        b, t, cin, cout = (int(v) for v in rng.integers(1, 5, size=4))
        k = int(rng.choice([1, 3, 5]))
        x = rng.normal(size=(b, t, cin))
        kernel = rng.normal(size=(k, cin, cout))
        got = L.conv1d_forward(x, kernel)[0]
        assert np.max(np.abs(got - conv1d_loops(x, kernel))) < 1e-12


# --- batch norm ---------------------------------------------------------------

@pytest.mark.parametrize("mode", ["infer", "train"])
@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_gradients(seed, mode):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 5)) * 2 + 1
    gamma = rng.normal(size=5)
    beta = rng.normal(size=5)
    mm = rng.normal(size=5)
    mv = rng.uniform(0.5, 2.0, size=5)

    def run():
        return L.batchnorm_forward(x, gamma, beta, mm, mv, mode)

    def bwd(dy):
        dx, g = L.batchnorm_backward(dy, run()[1])
        return {"x": dx, "gamma": g["gamma"], "beta": g["beta"]}

    assert gradcheck(lambda: run()[0], bwd, {"x": x, "gamma": gamma, "beta": beta}, rng) < TOL


def test_batchnorm_examples():
    x = np.full((2, 3, 1), 4.0)
    y, _, mm, mv = L.batchnorm_forward(x, np.array([2.0]), np.array([0.7]),
                                       np.zeros(1), np.ones(1), "train")
    assert np.allclose(y, 0.7)
    assert mm[0] == pytest.approx(0.01 * 4.0) and mv[0] == pytest.approx(0.99)
    x = np.random.default_rng(0).normal(size=(2, 3, 2))
    y = L.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "infer")[0]
    np.testing.assert_allclose(y, x / math.sqrt(1.001))


def test_batchnorm_infer_leaves_stats():
    mm, mv = np.array([1.0]), np.array([2.0])
    _, _, new_mm, new_mv = L.batchnorm_forward(np.ones((2, 2, 1)), np.ones(1), np.zeros(1), mm, mv, "infer")
    assert new_mm is mm and new_mv is mv


# --- LSTM -----------------------------------------------------------------------

def _lstm_params(rng, d, h, scale=0.5):
    return (rng.normal(size=(d, 4 * h)) * scale, rng.normal(size=(h, 4 * h)) * scale,
            rng.normal(size=4 * h) * scale)


@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_sequence_gradients(seed, reverse):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 3))
    k, r, b = _lstm_params(rng, 3, 4)

    def fwd():
        return L.lstm_forward(x, k, r, b, reverse)[0]

    def bwd(dy):
        dx, g = L.lstm_backward(dy, L.lstm_forward(x, k, r, b, reverse)[1])
        return {"x": dx, "k": g["kernel"], "r": g["recurrent_kernel"], "b": g["bias"]}

    assert gradcheck(fwd, bwd, {"x": x, "k": k, "r": r, "b": b}, rng) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_cell_gradients(seed):
    """A single step (T=1) isolates the cell equations."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 1, 2))
    k, r, b = _lstm_params(rng, 2, 2, scale=1.0)

    def fwd():
        return L.lstm_forward(x, k, r, b)[0]

    def bwd(dy):
        dx, g = L.lstm_backward(dy, L.lstm_forward(x, k, r, b)[1])
        return {"x": dx, "k": g["kernel"], "b": g["bias"]}

    assert gradcheck(fwd, bwd, {"x": x, "k": k, "b": b}, rng) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_bilstm_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 3))
    pf, pb = _lstm_params(rng, 3, 2), _lstm_params(rng, 3, 2)

    def fwd():
        return L.bilstm_forward(x, pf, pb)[0]

    def bwd(dy):
        dx, gf, gb = L.bilstm_backward(dy, L.bilstm_forward(x, pf, pb)[1])
        return {"x": dx, "fk": gf["kernel"], "br": gb["recurrent_kernel"]}

    assert gradcheck(fwd, bwd, {"x": x, "fk": pf[0], "br": pb[1]}, rng) < TOL


def test_lstm_matches_loops():
    rng = np.random.default_rng(200)
    for n in range(100):
        b, t, d, h = (int(v) for v in rng.integers(1, 4, size=4))
        x = rng.normal(size=(b, t, d))
        k, r, bias = _lstm_params(rng, d, h, scale=1.0)
        reverse = bool(n % 2)
        got = L.lstm_forward(x, k, r, bias, reverse)[0]
        assert np.max(np.abs(got - lstm_loops(x, k, r, bias, reverse))) < 1e-12


def test_lstm_single_step_hand_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 1, 2))
    k, r, b = _lstm_params(rng, 2, 2, scale=1.0)
    z = x[0, 0] @ k + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[:2]), sig(z[2:4]), np.tanh(z[4:6]), sig(z[6:])
    c = i * g
    want = o * np.tanh(c)
    got = L.lstm_forward(x, k, r, b)[0][0, 0]
    assert np.max(np.abs(got - want)) < 1e-12
    assert f.shape == (2,)


def test_lstm_zero_params_zero_output():
    x = np.random.default_rng(1).normal(size=(2, 7, 3))
    zeros = (np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    assert np.all(L.lstm_forward(x, *zeros)[0] == 0.0)
    assert np.all(L.bilstm_forward(x, zeros, zeros)[0] == 0.0)


def test_bilstm_concatenation_order():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 5, 2))
    pf, pb = _lstm_params(rng, 2, 3), _lstm_params(rng, 2, 3)
    out = L.bilstm_forward(x, pf, pb)[0]
    np.testing.assert_array_equal(out[..., :3], L.lstm_forward(x, *pf)[0])
    np.testing.assert_array_equal(out[..., 3:], L.lstm_forward(x, *pb, reverse=True)[0])
    # the backward direction's state at t=0 has seen the whole sequence
    np.testing.assert_allclose(out[0, 0, 3:], lstm_loops(x[:, ::-1], *pb)[0, -1], atol=1e-12)


# --- layer norm -----------------------------------------------------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_layernorm_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 6))
    gamma, beta = rng.normal(size=6), rng.normal(size=6)

    def fwd():
        return L.layernorm_forward(x, gamma, beta)[0]

    def bwd(dy):
        dx, g = L.layernorm_backward(dy, L.layernorm_forward(x, gamma, beta)[1])
        return {"x": dx, "gamma": g["gamma"], "beta": g["beta"]}

    assert gradcheck(fwd, bwd, {"x": x, "gamma": gamma, "beta": beta}, rng) < TOL


def test_layernorm_constant_input():
    y = L.layernorm_forward(np.full((1, 2, 4), 3.0), np.full(4, 5.0), np.arange(4.0))[0]
    assert np.all(y == np.arange(4.0))


# --- attention ------------------------------------------------------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(2, 5, 4))
    w1, w2, b = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=3)
    wa = rng.normal(size=(2, 5))

    def fwd():
        (c, a), _ = L.attention_forward(h, w1, w2, b)
        # fold alpha in too so its gradient path is exercised
        return np.concatenate([c, a * wa], axis=1)

    def bwd(dy):
        _, cache = L.attention_forward(h, w1, w2, b)
        dh, g = L.attention_backward(dy[:, :4], cache, dalpha=dy[:, 4:] * wa)
        return {"h": dh, "W1": g["W1"], "w2": g["w2"], "b": g["b"]}

    assert gradcheck(fwd, bwd, {"h": h, "W1": w1, "w2": w2, "b": b}, rng) < TOL


def test_attention_uniform_when_w1_zero():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(2, 30, 6))
    (c, a), _ = L.attention_forward(h, np.zeros((6, 4)), rng.normal(size=4), rng.normal(size=4))
    np.testing.assert_allclose(a, 1 / 30, rtol=0, atol=1e-15)
    np.testing.assert_allclose(c, h.mean(axis=1), atol=1e-12)


def test_softmax_closed_form():
    a = L.softmax(np.array([[0.0, math.log(3.0)]]))
    np.testing.assert_allclose(a, [[0.25, 0.75]], atol=1e-15)


def test_attention_invariants_property():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        t, d, u = (int(v) for v in rng.integers(1, 8, size=3))
        h = rng.normal(size=(1, t, d)) * rng.uniform(0.1, 10)
        w1, w2, b = rng.normal(size=(d, u)), rng.normal(size=u) * 3, rng.normal(size=u)
        (c, a), _ = L.attention_forward(h, w1, w2, b)
        assert np.all(a >= 0)
        assert abs(a.sum() - 1.0) < 1e-9
        assert np.all(c >= h.min(axis=1) - 1e-12) and np.all(c <= h.max(axis=1) + 1e-12)
        e = rng.normal(size=(1, t)) * 5
        assert np.max(np.abs(L.softmax(e + rng.normal() * 100) - L.softmax(e))) < 1e-12


# --- dense ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)

    def fwd():
        return L.dense_forward(x, k, b)[0]

    def bwd(dy):
        dx, g = L.dense_backward(dy, L.dense_forward(x, k, b)[1])
        return {"x": dx, "k": g["kernel"], "b": g["bias"]}

    assert gradcheck(fwd, bwd, {"x": x, "k": k, "b": b}, rng) < TOL


def test_dropout_mask():
    rng = np.random.default_rng(0)
    assert L.dropout_mask((3, 3), 0.0, rng) is None
    mask = L.dropout_mask((200, 200), 0.2, rng)
    assert set(np.unique(mask)) == {0.0, 1.25}
    assert abs(np.mean(mask == 0) - 0.2) < 0.01
