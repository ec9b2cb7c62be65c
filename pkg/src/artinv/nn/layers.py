"""Neural layer primitives: affine, 1-D conv, LSTM/BLSTM, instance norm, AdaIN.

Parameters live in nested dicts of ``Tensor`` leaves so whole models can be
flattened, serialized, and finite-difference checked uniformly.
"""

import numpy as np

from .autodiff import (Tensor, concat, pad_edge, reverse_padded, sigmoid,
                       sqrt, tanh)

__all__ = [
    "glorot", "dense_params", "dense", "conv1d_params", "conv1d",
    "lstm_params", "lstm", "blstm_params", "blstm",
    "instance_norm", "adain", "flatten_tree", "zero_grads", "tree_map",
]


def glorot(rng, shape, dtype):
    fan_in, fan_out = shape[0], shape[-1]
    if len(shape) == 3:  # (K, Cin, Cout) conv kernels
        fan_in = shape[0] * shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dense_params(rng, d_in, d_out, dtype=np.float32):
    return {
        "W": Tensor(glorot(rng, (d_in, d_out), dtype), requires_grad=True),
        "b": Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
    }


def dense(x, p):
    return x @ p["W"] + p["b"]


def conv1d_params(rng, k, c_in, c_out, dtype=np.float32):
    return {
        "W": Tensor(glorot(rng, (k, c_in, c_out), dtype), requires_grad=True),
        "b": Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
    }


def conv1d(x, p):
    """Same-length 1-D convolution over time of a (B,T,C) map.

    Edge-replicating padding, so a constant input stays constant.
    """
    k = p["W"].shape[0]
    T = x.shape[-2]
    xp = pad_edge(x, k // 2, axis=x.ndim - 2)
    out = None
    for tap in range(k):
        term = xp[(slice(None),) * (x.ndim - 2) + (slice(tap, tap + T),)] @ p["W"][tap]
        out = term if out is None else out + term
    return out + p["b"]


# ---- LSTM ----------------------------------------------------------------

def lstm_params(rng, d_in, hidden, dtype=np.float32):
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return {
        "Wx": Tensor(glorot(rng, (d_in, 4 * hidden), dtype), requires_grad=True),
        "Wh": Tensor(glorot(rng, (hidden, 4 * hidden), dtype), requires_grad=True),
        "b": Tensor(b, requires_grad=True),
    }


def lstm(x, p):
    """Unidirectional LSTM over a (B,T,D) input; returns (B,T,H) hidden states.

    Forward and backward passes are hand-written (gate caches, reverse-time
    recurrence) and validated against finite differences in the test suite.
    """
    Wx, Wh, b = p["Wx"], p["Wh"], p["b"]
    B, T, D = x.shape
    H = Wh.shape[0]
    dtype = x.dtype
    xproj = (x.data.reshape(-1, D) @ Wx.data + b.data).reshape(B, T, 4 * H)
    I = np.empty((B, T, H), dtype)
    F = np.empty((B, T, H), dtype)
    G = np.empty((B, T, H), dtype)
    O = np.empty((B, T, H), dtype)
    C = np.empty((B, T, H), dtype)
    Hs = np.empty((B, T, H), dtype)
    h = np.zeros((B, H), dtype)
    c = np.zeros((B, H), dtype)
    for t in range(T):
        z = xproj[:, t, :] + h @ Wh.data
        i = 1.0 / (1.0 + np.exp(-z[:, :H]))
        f = 1.0 / (1.0 + np.exp(-z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        I[:, t], F[:, t], G[:, t], O[:, t], C[:, t], Hs[:, t] = i, f, g, o, c, h

    out = Tensor(Hs, parents=(x, Wx, Wh, b))
    if out.requires_grad:
        def bwd(g_out):
            dWx = np.zeros_like(Wx.data)
            dWh = np.zeros_like(Wh.data)
            db = np.zeros_like(b.data)
            dx = np.zeros_like(x.data)
            dh_next = np.zeros((B, H), dtype)
            dc_next = np.zeros((B, H), dtype)
            for t in range(T - 1, -1, -1):
                i, f, gg, o, c_t = I[:, t], F[:, t], G[:, t], O[:, t], C[:, t]
                c_prev = C[:, t - 1] if t > 0 else np.zeros((B, H), dtype)
                h_prev = Hs[:, t - 1] if t > 0 else np.zeros((B, H), dtype)
                tc = np.tanh(c_t)
                dh = g_out[:, t] + dh_next
                do = dh * tc
                dc = dc_next + dh * o * (1.0 - tc * tc)
                di = dc * gg
                df = dc * c_prev
                dg = dc * i
                dz = np.concatenate([
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - gg * gg),
                    do * o * (1.0 - o),
                ], axis=1)
                dx[:, t] = dz @ Wx.data.T
                dWx += x.data[:, t].T @ dz
                dWh += h_prev.T @ dz
                db += dz.sum(axis=0)
                dh_next = dz @ Wh.data.T
                dc_next = dc * f
            if x.requires_grad:
                x.accumulate(dx)
            if Wx.requires_grad:
                Wx.accumulate(dWx)
            if Wh.requires_grad:
                Wh.accumulate(dWh)
            if b.requires_grad:
                b.accumulate(db)
        out._backward = bwd
    return out


def blstm_params(rng, d_in, hidden, dtype=np.float32):
    return {
        "fwd": lstm_params(rng, d_in, hidden, dtype),
        "bwd": lstm_params(rng, d_in, hidden, dtype),
    }


def blstm(x, p, lengths=None):
    """Bidirectional LSTM layer whose output averages the two directions.

    Returns ``(out, o_fwd, o_bwd)`` with ``out = 0.5 * (o_fwd + o_bwd)``;
    the per-direction outputs are exposed so the averaging contract can be
    asserted directly.
    """
    if lengths is None:
        lengths = [x.shape[1]] * x.shape[0]
    o_fwd = lstm(x, p["fwd"])
    o_bwd = reverse_padded(lstm(reverse_padded(x, lengths), p["bwd"]), lengths)
    out = (o_fwd + o_bwd) * 0.5
    return out, o_fwd, o_bwd


# ---- normalization -------------------------------------------------------

def instance_norm(x, eps=1e-5, mask=None):
    """Per-channel normalization over time of a (B,T,C) or (T,C) map.

    The standard deviation includes ``eps`` under the root, so constant
    channels map to zeros. Returns ``(normalized, (mean, std))`` with the
    statistics detached as plain arrays.

    ``mask`` (B,T,1) restricts the statistics to valid frames; masked-out
    frames still get normalized values but should be ignored downstream.
    """
    axis = x.ndim - 2
    if mask is None:
        u = x.mean(axis=axis, keepdims=True)
        var = ((x - u) * (x - u)).mean(axis=axis, keepdims=True)
    else:
        count = mask.sum(axis=axis, keepdims=True)
        u = (x * mask).sum(axis=axis, keepdims=True) / count
        d = (x - u) * (x - u)
        var = (d * mask).sum(axis=axis, keepdims=True) / count
    sigma = sqrt(var + np.asarray(eps, dtype=x.dtype))
    y = (x - u) / sigma
    return y, (u.data.copy(), sigma.data.copy())


def adain(x, gamma, beta, eps=1e-5, mask=None):
    """Adaptive instance normalization: re-style an IN-normalized map.

    ``gamma``/``beta`` are per-channel, shaped (C,), (B,C) or broadcastable
    to the (…,T,C) map.
    """
    if gamma.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"style has {gamma.shape[-1]} channels, map has {x.shape[-1]}")
    y, _ = instance_norm(x, eps=eps, mask=mask)
    if gamma.ndim == 2 and x.ndim == 3:
        gamma = gamma.reshape(gamma.shape[0], 1, gamma.shape[1])
        beta = beta.reshape(beta.shape[0], 1, beta.shape[1])
    return y * gamma + beta


# ---- parameter trees -----------------------------------------------------

def flatten_tree(tree, prefix=""):
    """Flatten a nested dict of Tensor leaves to {path: Tensor}."""
    flat = {}
    for key in sorted(tree):
        val = tree[key]
        path = f"{prefix}{key}" if not prefix else f"{prefix}/{key}"
        if isinstance(val, dict):
            flat.update(flatten_tree(val, path))
        else:
            flat[path] = val
    return flat


def tree_map(fn, tree):
    return {k: tree_map(fn, v) if isinstance(v, dict) else fn(v)
            for k, v in tree.items()}


def zero_grads(tree):
    for leaf in flatten_tree(tree).values():
        leaf.grad = None
