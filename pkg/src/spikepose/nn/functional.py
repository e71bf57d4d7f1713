"""Differentiable operations: conv, batch norm, ReLU, PLIF step, glue ops.

Every op builds the backward closure by hand; the analytic gradients are
pinned by central finite differences in the test suite. All ops preserve
dtype (float32 default, float64 for gradient checks).
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .tensor import Tensor, make_op_output

PLIF_THRESHOLD = 1.0
SURROGATE_ALPHA = 2.0


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- glue ops

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_op_output(out_data, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(-_unbroadcast(g, b.data.shape))

    return make_op_output(out_data, (a, b), _bw)


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data * c

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * c)

    return make_op_output(out_data, (x,), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_op_output(out_data, (a, b), _bw)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g / x.data.size))

    return make_op_output(out_data, (x,), _bw)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g))

    return make_op_output(out_data, (x,), _bw)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        pieces = np.split(g, splits, axis=axis)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                p.accumulate_grad(piece)

    return make_op_output(out_data, tuple(parts), _bw)


def euclid_norm(x: Tensor, axis: int = -1) -> Tensor:
    """L2 norm along `axis`; subgradient 0 at the origin (guarded divide)."""
    x = _as_tensor(x)
    nrm = np.sqrt(np.sum(np.square(x.data), axis=axis))

    def _bw(g):
        if x.requires_grad:
            safe = np.maximum(nrm, np.finfo(x.data.dtype).tiny)
            gx = (np.expand_dims(g / safe, axis) * x.data)
            x.accumulate_grad(gx)

    return make_op_output(nrm, (x,), _bw)


# -------------------------------------------------------------- neural ops

def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return make_op_output(out_data, (x,), _bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation, NCHW x OIHW; spatial out = floor((in+2p-k)/s)+1."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input/weight, got {x.shape}/{w.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"channel mismatch: input {x.data.shape[1]} vs "
                         f"weight {w.data.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out_data = backend.conv2d_forward(x.data, w.data, stride, padding)
    if b is not None:
        out_data = out_data + b.data.reshape(1, -1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    in_h, in_w = x.data.shape[2], x.data.shape[3]
    kh, kw = w.data.shape[2], w.data.shape[3]

    def _bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x.accumulate_grad(backend.conv2d_backward_input(g, w.data, stride, padding,
                                                            in_h, in_w))
        if w.requires_grad:
            w.accumulate_grad(backend.conv2d_backward_weight(g, x.data, stride, padding,
                                                             kh, kw))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return make_op_output(out_data, parents, _bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (N,H,W).

    Train mode normalizes with biased batch statistics and updates the
    running buffers in place (running variance uses the unbiased estimate
    when more than one sample contributes). Eval mode uses the buffers.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    axes = (0, 2, 3)
    c = x.data.shape[1]
    gshape = (1, c, 1, 1)

    if training:
        m = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // c
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        m = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - m.reshape(gshape)) * inv_std.reshape(gshape)
    out_data = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)

    def _bw(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(g * xhat, axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(g, axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(gshape)
            if training:
                mean_g = gxhat.mean(axis=axes).reshape(gshape)
                mean_gx = (gxhat * xhat).mean(axis=axes).reshape(gshape)
                gx = inv_std.reshape(gshape) * (gxhat - mean_g - xhat * mean_gx)
            else:
                gx = gxhat * inv_std.reshape(gshape)
            x.accumulate_grad(gx)

    return make_op_output(out_data, (x, gamma, beta), _bw)


def surrogate_primitive(u: np.ndarray, alpha: float = SURROGATE_ALPHA) -> np.ndarray:
    """Smooth stand-in for heaviside: arctan sigmoid with slope alpha at 0."""
    return np.arctan(math.pi / 2 * alpha * u) / math.pi + 0.5


def surrogate_derivative(u: np.ndarray, alpha: float = SURROGATE_ALPHA) -> np.ndarray:
    return (alpha / 2.0) / (1.0 + np.square(math.pi / 2 * alpha * u))


def plif_step(x: Tensor, v: Tensor, w: Tensor,
              threshold: float = PLIF_THRESHOLD,
              alpha: float = SURROGATE_ALPHA,
              surrogate_forward: bool = False) -> tuple[Tensor, Tensor]:
    """One parametric-LIF step with trainable decay and soft reset.

    decay a = sigmoid(w); charge H = V + a*(X - V); spike S = heaviside(H - threshold);
    reset V' = H - threshold*S. The backward pass substitutes the arctan
    surrogate for heaviside's derivative; `surrogate_forward=True` also
    substitutes the smooth primitive in the forward pass so the analytic
    gradients can be checked against finite differences of the same function.

    Returns (spikes, new membrane potential); both stay on the graph, so a
    chained sequence of steps backpropagates through time.
    """
    x, v, w = _as_tensor(x), _as_tensor(v), _as_tensor(w)
    if x.data.shape != v.data.shape:
        raise ValueError(f"input shape {x.data.shape} != state shape {v.data.shape}")
    a = 1.0 / (1.0 + np.exp(-w.data))
    h = v.data + a * (x.data - v.data)
    u = h - threshold
    if surrogate_forward:
        s = surrogate_primitive(u, alpha).astype(x.data.dtype)
    else:
        s = (u >= 0).astype(x.data.dtype)
    v_next = h - threshold * s

    dsdh = None

    def _dsdh():
        nonlocal dsdh
        if dsdh is None:
            dsdh = surrogate_derivative(u, alpha)
        return dsdh

    def _push_gh(gh):
        # distribute dL/dH to x, v and the decay parameter
        if x.requires_grad:
            x.accumulate_grad(gh * a)
        if v.requires_grad:
            v.accumulate_grad(gh * (1.0 - a))
        if w.requires_grad:
            ga = np.sum(gh * (x.data - v.data))
            w.accumulate_grad(np.asarray(ga * a * (1.0 - a), dtype=w.data.dtype)
                              .reshape(w.data.shape))

    def _bw_spikes(g):
        _push_gh(g * _dsdh())

    def _bw_vnext(g):
        _push_gh(g * (1.0 - threshold * _dsdh()))

    spikes = make_op_output(s, (x, v, w), _bw_spikes)
    new_v = make_op_output(v_next, (x, v, w), _bw_vnext)
    return spikes, new_v


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def _bw(g):
        if x.requires_grad:
            gx = np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape)
            x.accumulate_grad(np.ascontiguousarray(gx).astype(x.data.dtype))

    return make_op_output(out_data, (x,), _bw)
