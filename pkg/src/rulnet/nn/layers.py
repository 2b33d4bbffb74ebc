"""Layer primitives with explicit forward and backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns the input gradient
plus a dict of parameter gradients. Sequences are laid out (batch, time,
channels) throughout and everything runs in float64.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def sigmoid(z):
    return 0.5 * np.tanh(0.5 * z) + 0.5


# --- Conv1D, same padding, no bias -------------------------------------------

def conv1d_forward(x, kernel):
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 != 1:
        raise ShapeError("conv1d: kernel size must be odd")
    pad = (k - 1) // 2
    t = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    y = np.zeros((x.shape[0], t, kernel.shape[2]))
    for j in range(k):
        y += xp[:, j:j + t, :] @ kernel[j]
    return y, (xp, kernel, pad)


def conv1d_backward(dy, cache):
    xp, kernel, pad = cache
    t = dy.shape[1]
    dxp = np.zeros_like(xp)
    dkernel = np.empty_like(kernel)
    dy2 = dy.reshape(-1, dy.shape[2])
    for j in range(kernel.shape[0]):
        window = xp[:, j:j + t, :]
        dkernel[j] = window.reshape(-1, window.shape[2]).T @ dy2
        dxp[:, j:j + t, :] += dy @ kernel[j].T
    return dxp[:, pad:pad + t, :], {"kernel": dkernel}


# --- Batch normalization over (batch, time) ----------------------------------

def batchnorm_forward(x, gamma, beta, moving_mean, moving_var, mode,
                      momentum=0.99, eps=1e-3):
    """Returns ``(y, cache, new_moving_mean, new_moving_var)``.

    Moving statistics are returned rather than updated in place; in infer
    mode they come back unchanged.
    """
    if mode == "train":
        n = x.shape[0] * x.shape[1]
        if n < 2:
            raise ShapeError("batchnorm in train mode needs at least two rows")
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        new_mean = momentum * moving_mean + (1.0 - momentum) * mean
        new_var = momentum * moving_var + (1.0 - momentum) * var
    else:
        mean, var = moving_mean, moving_var
        new_mean, new_var = moving_mean, moving_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma, mode, mean, var), new_mean, new_var


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, mode = cache[:4]
    dgamma = np.sum(dy * xhat, axis=(0, 1))
    dbeta = np.sum(dy, axis=(0, 1))
    dxhat = dy * gamma
    if mode == "train":
        n = dy.shape[0] * dy.shape[1]
        dx = (inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=(0, 1))
            - xhat * np.sum(dxhat * xhat, axis=(0, 1))
        )
    else:
        dx = dxhat * inv_std
    return dx, {"gamma": dgamma, "beta": dbeta}


# --- Activations and dropout -------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: zeros with probability ``rate``, else ``1/(1-rate)``."""
    if rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout_apply(x, mask):
    return x if mask is None else x * mask


# --- LSTM ---------------------------------------------------------------------
# Gate order along the 4H axis: input, forget, candidate (g), output.

def lstm_forward(x, kernel, recurrent_kernel, bias, reverse=False):
    """Unidirectional LSTM with zero initial state.

    With ``reverse=True`` the sequence is consumed last-to-first and the
    output is flipped back, so ``h[:, t]`` is always the state aligned with
    input step ``t``.
    """
    b, t, d = x.shape
    hdim = recurrent_kernel.shape[0]
    if kernel.shape != (d, 4 * hdim) or recurrent_kernel.shape != (hdim, 4 * hdim):
        raise ShapeError(f"lstm: kernel {kernel.shape} / recurrent {recurrent_kernel.shape} "
                         f"incompatible with input dim {d}")
    # reversed views have negative strides, which makes matmul fall off the BLAS path
    xs = np.ascontiguousarray(x[:, ::-1, :] if reverse else x)
    zx = xs @ kernel + bias
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    hs = np.empty((b, t, hdim))
    cs = np.empty((b, t, hdim))
    tcs = np.empty((b, t, hdim))
    gates = np.empty((b, t, 4 * hdim))
    gsl = slice(2 * hdim, 3 * hdim)
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so all four gates need one tanh call
    half = np.full(4 * hdim, 0.5)
    half[gsl] = 1.0
    shift = np.full(4 * hdim, 0.5)
    shift[gsl] = 0.0
    for s in range(t):
        z = zx[:, s] + h @ recurrent_kernel
        act = gates[:, s]
        np.tanh(z * half, out=act)
        act *= half
        act += shift
        c = act[:, hdim:2 * hdim] * c + act[:, :hdim] * act[:, gsl]
        tc = np.tanh(c)
        h = act[:, 3 * hdim:] * tc
        hs[:, s] = h
        cs[:, s] = c
        tcs[:, s] = tc
    out = hs[:, ::-1, :] if reverse else hs
    cache = (xs, hs, cs, tcs, gates, kernel, recurrent_kernel, reverse)
    return np.ascontiguousarray(out), cache


def lstm_backward(dout, cache):
    xs, hs, cs, tcs, gates, kernel, recurrent_kernel, reverse = cache
    b, t, hdim = hs.shape
    dhs = dout[:, ::-1, :] if reverse else dout
    dz_all = np.empty_like(gates)
    rec_t = np.ascontiguousarray(recurrent_kernel.T)
    dh_next = np.zeros((b, hdim))
    dc_next = np.zeros((b, hdim))
    for s in range(t - 1, -1, -1):
        i = gates[:, s, :hdim]
        f = gates[:, s, hdim:2 * hdim]
        g = gates[:, s, 2 * hdim:3 * hdim]
        o = gates[:, s, 3 * hdim:]
        c_prev = cs[:, s - 1] if s > 0 else 0.0
        tc = tcs[:, s]
        dh = dhs[:, s] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, s]
        dz[:, :hdim] = dc * g * i * (1.0 - i)
        dz[:, hdim:2 * hdim] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hdim:3 * hdim] = dc * i * (1.0 - g * g)
        dz[:, 3 * hdim:] = dh * tc * o * (1.0 - o)
        dh_next = dz @ rec_t
        dc_next = dc * f
    d = xs.shape[2]
    dz_flat = dz_all.reshape(-1, 4 * hdim)
    # h_{s-1} pairs with dz_s; the initial state is zero so s = 0 contributes nothing
    drec = hs[:, :-1].reshape(-1, hdim).T @ dz_all[:, 1:].reshape(-1, 4 * hdim)
    dkernel = xs.reshape(-1, d).T @ dz_flat
    dbias = dz_flat.sum(axis=0)
    dxs = dz_all @ kernel.T
    dx = dxs[:, ::-1, :] if reverse else dxs
    return np.ascontiguousarray(dx), {
        "kernel": dkernel, "recurrent_kernel": drec, "bias": dbias,
    }


def bilstm_forward(x, fwd, bwd):
    """``fwd``/``bwd`` are (kernel, recurrent_kernel, bias) triples."""
    hf, cf = lstm_forward(x, *fwd, reverse=False)
    hb, cb = lstm_forward(x, *bwd, reverse=True)
    return np.concatenate([hf, hb], axis=2), (cf, cb, hf.shape[2])


def bilstm_backward(dout, cache):
    cf, cb, hdim = cache
    dxf, gf = lstm_backward(dout[:, :, :hdim], cf)
    dxb, gb = lstm_backward(dout[:, :, hdim:], cb)
    return dxf + dxb, gf, gb


# --- Layer normalization over the last axis ----------------------------------

def layernorm_forward(x, gamma, beta, eps=1e-3):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma)


def layernorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * gamma
    n = dy.shape[-1]
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, {"gamma": dgamma, "beta": dbeta}


# --- Additive attention -------------------------------------------------------

def softmax(e, axis=-1):
    z = e - e.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def attention_forward(hseq, w1, w2, b):
    """Scores ``e_t = w2 . tanh(W1^T H_t + b)``, weights ``softmax(e)``, context ``sum a_t H_t``.

    ``w1`` is stored (D, A) so the projection is ``H @ w1``.
    """
    if hseq.shape[2] != w1.shape[0] or w1.shape[1] != w2.shape[0] or b.shape != w2.shape:
        raise ShapeError(f"attention: H {hseq.shape} vs W1 {w1.shape}, w2 {w2.shape}, b {b.shape}")
    u = np.tanh(hseq @ w1 + b)
    scores = u @ w2
    alpha = softmax(scores, axis=1)
    context = np.einsum("bt,btd->bd", alpha, hseq)
    return (context, alpha), (hseq, u, scores, alpha, w1, w2)


def attention_backward(dcontext, cache, dalpha=None):
    hseq, u, scores, alpha, w1, w2 = cache
    da = np.einsum("bd,btd->bt", dcontext, hseq)
    if dalpha is not None:
        da = da + dalpha
    de = alpha * (da - np.sum(alpha * da, axis=1, keepdims=True))
    dh = alpha[:, :, None] * dcontext[:, None, :]
    dw2 = np.einsum("bt,bta->a", de, u)
    dpre = de[:, :, None] * w2 * (1.0 - u * u)
    dw1 = hseq.reshape(-1, hseq.shape[2]).T @ dpre.reshape(-1, dpre.shape[2])
    db = dpre.sum(axis=(0, 1))
    dh += dpre @ w1.T
    return dh, {"W1": dw1, "w2": dw2, "b": db}


# --- Dense --------------------------------------------------------------------

def dense_forward(x, kernel, bias):
    if x.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with kernel {kernel.shape}")
    return x @ kernel + bias, (x, kernel)


def dense_backward(dy, cache):
    x, kernel = cache
    return dy @ kernel.T, {"kernel": x.T @ dy, "bias": dy.sum(axis=0)}
