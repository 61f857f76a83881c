"""Stacked (bi)directional LSTM regressor in numpy with exact BPTT gradients.

Parameters live in a flat ``dict[str, ndarray]``:

``l{k}.{fwd|bwd}.W``  ``(4h, in + h)`` input and recurrent weights, gate order i, f, g, o
``l{k}.{fwd|bwd}.b``  ``(4h,)``
``head.W``            ``(h_out,)`` with ``h_out = h`` or ``2h`` when bidirectional
``head.b``            ``(1,)``

Inputs are batches ``(B, T, D)``; outputs are ``(B, T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def directions(bidirectional: bool) -> tuple[str, ...]:
    return ("fwd", "bwd") if bidirectional else ("fwd",)


def init_params(input_dim: int, hidden: int, layers: int, bidirectional: bool, rng: np.random.Generator) -> Params:
    """Uniform ``(-1/sqrt(h), 1/sqrt(h))`` init for every tensor."""
    bound = 1.0 / np.sqrt(hidden)
    params: Params = {}
    width = len(directions(bidirectional)) * hidden
    in_dim = input_dim
    for layer in range(layers):
        for d in directions(bidirectional):
            params[f"l{layer}.{d}.W"] = rng.uniform(-bound, bound, (4 * hidden, in_dim + hidden))
            params[f"l{layer}.{d}.b"] = rng.uniform(-bound, bound, 4 * hidden)
        in_dim = width
    params["head.W"] = rng.uniform(-bound, bound, width)
    params["head.b"] = rng.uniform(-bound, bound, 1)
    return params


def infer_shape(params: Params) -> tuple[int, int, int, bool]:
    """``(input_dim, hidden, layers, bidirectional)`` from the parameter tensors."""
    w0 = params["l0.fwd.W"]
    hidden = w0.shape[0] // 4
    layers = 1 + max(int(k.split(".")[0][1:]) for k in params if k.startswith("l"))
    return w0.shape[1] - hidden, hidden, layers, "l0.bwd.W" in params


@dataclass
class _DirCache:
    x: np.ndarray
    h: np.ndarray  # (B, T+1, h), h[:, 0] is the zero state
    c: np.ndarray  # (B, T+1, h)
    gates: np.ndarray  # (B, T, 4h) post-activation
    tanh_c: np.ndarray  # (B, T, h)


@dataclass
class ForwardCache:
    layer_inputs: list[np.ndarray] = field(default_factory=list)
    dirs: list[dict[str, _DirCache]] = field(default_factory=list)
    top: np.ndarray | None = None


def _run_direction(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> _DirCache:
    B, T, D = x.shape
    hdim = W.shape[0] // 4
    Wx, Wh = W[:, :D], W[:, D:]
    zx = x @ Wx.T + b
    h = np.zeros((B, T + 1, hdim))
    c = np.zeros((B, T + 1, hdim))
    gates = np.empty((B, T, 4 * hdim))
    tanh_c = np.empty((B, T, hdim))
    for t in range(T):
        z = zx[:, t] + h[:, t] @ Wh.T
        g = gates[:, t]
        g[:, : 2 * hdim] = _sigmoid(z[:, : 2 * hdim])
        g[:, 2 * hdim : 3 * hdim] = np.tanh(z[:, 2 * hdim : 3 * hdim])
        g[:, 3 * hdim :] = _sigmoid(z[:, 3 * hdim :])
        i, f, gg, o = g[:, :hdim], g[:, hdim : 2 * hdim], g[:, 2 * hdim : 3 * hdim], g[:, 3 * hdim :]
        c[:, t + 1] = f * c[:, t] + i * gg
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o * tanh_c[:, t]
    return _DirCache(x, h, c, gates, tanh_c)


def _back_direction(W: np.ndarray, cache: _DirCache, dout: np.ndarray):
    x, h, c, gates, tanh_c = cache.x, cache.h, cache.c, cache.gates, cache.tanh_c
    B, T, D = x.shape
    hdim = W.shape[0] // 4
    Wh = W[:, D:]
    dz_all = np.empty((B, T, 4 * hdim))
    dh_next = np.zeros((B, hdim))
    dc_next = np.zeros((B, hdim))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, gg, o = g[:, :hdim], g[:, hdim : 2 * hdim], g[:, 2 * hdim : 3 * hdim], g[:, 3 * hdim :]
        dh = dout[:, t] + dh_next
        tc = tanh_c[:, t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, t]
        dz[:, :hdim] = dc * gg * i * (1.0 - i)
        dz[:, hdim : 2 * hdim] = dc * c[:, t] * f * (1.0 - f)
        dz[:, 2 * hdim : 3 * hdim] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * hdim :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ Wh
    flat_dz = dz_all.reshape(B * T, 4 * hdim)
    dW = np.empty_like(W)
    dW[:, :D] = flat_dz.T @ x.reshape(B * T, D)
    dW[:, D:] = flat_dz.T @ h[:, :-1].reshape(B * T, hdim)
    db = flat_dz.sum(axis=0)
    dx = dz_all @ W[:, :D]
    return dW, db, dx


def lstm_forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on ``x`` of shape ``(B, T, D)`` (or ``(T, D)``)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    input_dim, _, layers, bidirectional = infer_shape(params)
    if x.ndim != 3 or x.shape[2] != input_dim or x.shape[1] < 1:
        raise ValueError(f"expected input (B, T>=1, {input_dim}), got {x.shape}")
    cache = ForwardCache()
    inp = x
    for layer in range(layers):
        cache.layer_inputs.append(inp)
        dcache = {}
        outs = []
        for d in directions(bidirectional):
            W, b = params[f"l{layer}.{d}.W"], params[f"l{layer}.{d}.b"]
            seq = inp if d == "fwd" else inp[:, ::-1]
            dc = _run_direction(W, b, seq)
            dcache[d] = dc
            out = dc.h[:, 1:]
            outs.append(out if d == "fwd" else out[:, ::-1])
        cache.dirs.append(dcache)
        inp = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
    cache.top = inp
    y = inp @ params["head.W"] + params["head.b"][0]
    return (y[0] if squeeze else y), cache


def lstm_backward(params: Params, cache: ForwardCache, dy: np.ndarray) -> Params:
    """Gradients of a scalar loss given ``dy = dL/dy`` with the shape of the forward output."""
    dy = np.asarray(dy, dtype=float)
    if dy.ndim == 1:
        dy = dy[None]
    _, hidden, layers, bidirectional = infer_shape(params)
    grads: Params = {}
    top = cache.top
    B, T, H = top.shape
    grads["head.W"] = dy.reshape(-1) @ top.reshape(B * T, H)
    grads["head.b"] = np.array([dy.sum()])
    dinp = dy[:, :, None] * params["head.W"]
    for layer in range(layers - 1, -1, -1):
        dx_total = None
        for k, d in enumerate(directions(bidirectional)):
            W = params[f"l{layer}.{d}.W"]
            dout = dinp[:, :, k * hidden : (k + 1) * hidden]
            if d == "bwd":
                dout = dout[:, ::-1]
            dW, db, dx = _back_direction(W, cache.dirs[layer][d], dout)
            if d == "bwd":
                dx = dx[:, ::-1]
            grads[f"l{layer}.{d}.W"] = dW
            grads[f"l{layer}.{d}.b"] = db
            dx_total = dx if dx_total is None else dx_total + dx
        dinp = dx_total
    return grads


def ccc_loss(pred, target, return_flag: bool = False):
    """``1 - CCC`` over all elements; ``(loss, grad)`` with ``grad`` shaped like ``pred``.

    When both sides are constant the loss is 1, the gradient is zero and the
    flag (if requested) is set.
    """
    p = np.asarray(pred, dtype=float)
    y = np.asarray(target, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    n = p.size
    if n < 2:
        raise ValueError("CCC loss needs at least 2 elements")
    mp_, my = p.mean(), y.mean()
    dp, dyc = p - mp_, y - my
    cov = np.mean(dp * dyc)
    denom = np.mean(dp * dp) + np.mean(dyc * dyc) + (mp_ - my) ** 2
    if denom == 0.0:
        out = (1.0, np.zeros_like(p))
        return (*out, True) if return_flag else out
    ccc = 2.0 * cov / denom
    dccc = (2.0 / (n * denom)) * dyc - (4.0 * cov / (n * denom * denom)) * (dp + (mp_ - my))
    out = (float(1.0 - ccc), -dccc)
    return (*out, False) if return_flag else out


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class NonFiniteGradientError(FloatingPointError):
    pass


def backward_and_step(params: Params, x: np.ndarray, y: np.ndarray, opt: Adam) -> float:
    """One optimizer step on a batch; returns the pre-update loss."""
    pred, cache = lstm_forward(params, x)
    loss, dpred = ccc_loss(pred, y)
    grads = lstm_backward(params, cache, dpred)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad or not np.isfinite(loss):
        raise NonFiniteGradientError(f"non-finite gradient in {', '.join(bad) or 'loss'} (loss={loss})")
    opt.step(params, grads)
    return loss
