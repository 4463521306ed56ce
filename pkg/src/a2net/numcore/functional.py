"""Differentiable operations on :class:`~a2net.numcore.tensor.Node`.

Every function accepts nodes or array-likes, computes its value eagerly with
numpy and attaches a backward closure. Shapes follow the [batch, channel,
time] convention of 1-D convolutional networks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from a2net.numcore.tensor import Node, constant


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a.value, b.value, "add")
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a.value, b.value, "sub")
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_broadcast(a.value, b.value, "mul")
    return Node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def relu(x) -> Node:
    x = constant(x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Node:
    x = constant(x)
    out = np.exp(x.value)
    return Node(out, (x,), lambda g: (g * out,))


def log(x) -> Node:
    x = constant(x)
    if np.any(x.value <= 0):
        raise ValueError("log: non-positive input")
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,))


def sigmoid(x) -> Node:
    x = constant(x)
    v = x.value
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Node(out, (x,), lambda g: (g * out * (1.0 - out),))


# -------------------------------------------------------------- reductions


def sum(x, axis=None) -> Node:  # noqa: A001 - mirrors numpy naming
    x = constant(x)
    out = x.value.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Node(out, (x,), bw)


def mean(x, axis=None) -> Node:
    x = constant(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# ----------------------------------------------------------------- algebra


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def reshape(x, shape: Sequence[int]) -> Node:
    x = constant(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return Node(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Node:
    x = constant(x)
    inverse = np.argsort(axes)
    return Node(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(nodes: Sequence, axis: int = 1) -> Node:
    """Concatenate along ``axis`` (the channel axis by default)."""
    nodes = [constant(n) for n in nodes]
    if not nodes:
        raise ValueError("concat: nothing to concatenate")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        shapes = [n.shape for n in nodes]
        raise ValueError(f"concat: incompatible shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Node(out, nodes, bw)


def slice_channels(x, start: int, stop: int) -> Node:
    """``x[:, start:stop]`` for [B, C, T] nodes."""
    x = constant(x)

    def bw(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return Node(x.value[:, start:stop], (x,), bw)


def take(x, indices) -> Node:
    """Gather entries of the flattened ``x`` at ``indices``."""
    x = constant(x)
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)

    def bw(g):
        full = np.zeros(x.value.size)
        np.add.at(full, idx, g)
        return (full.reshape(x.shape),)

    return Node(x.value.reshape(-1)[idx], (x,), bw)


# -------------------------------------------------------- 1-D conv / pool


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Node:
    """Cross-correlation of [B, C, T] input with [F, C, K] kernels."""
    x, weight = constant(x), constant(weight)
    if x.value.ndim != 3 or weight.value.ndim != 3:
        raise ValueError(f"conv1d: expected [B,C,T] and [F,C,K], got {x.shape} and {weight.shape}")
    B, C, T = x.shape
    F, Cw, K = weight.shape
    if C != Cw:
        raise ValueError(f"conv1d: input has {C} channels but weight expects {Cw}")
    if stride < 1 or padding < 0:
        raise ValueError("conv1d: stride must be positive and padding non-negative")
    if K > T + 2 * padding:
        raise ValueError(f"conv1d: kernel {K} longer than padded input {T + 2 * padding}")
    T_out = (T + 2 * padding - K) // stride + 1

    if padding:
        xp = np.zeros((B, C, T + 2 * padding))
        xp[:, :, padding : padding + T] = x.value
    else:
        xp = x.value
    # cols[b, c, t, k] = xp[b, c, t*stride + k]
    cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :T_out]
    out = np.tensordot(cols, weight.value, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    parents = [x, weight]
    if bias is not None:
        bias = constant(bias)
        if bias.shape != (F,):
            raise ValueError(f"conv1d: bias shape {bias.shape} does not match {F} filters")
        out = out + bias.value[None, :, None]
        parents.append(bias)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        gcols = np.tensordot(g, weight.value, axes=([1], [0]))  # [B, T_out, C, K]
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, :, k : k + stride * (T_out - 1) + 1 : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
        gx = gxp[:, :, padding : padding + T] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return Node(out, parents, bw)


def maxpool1d(x, kernel: int, stride: int) -> Node:
    """Windowed maximum over time; ties route gradient to the lowest index."""
    x = constant(x)
    B, C, T = x.shape
    if kernel > T:
        raise ValueError(f"maxpool1d: kernel {kernel} longer than input {T}")
    T_out = (T - kernel) // stride + 1
    windows = sliding_window_view(x.value, kernel, axis=2)[:, :, ::stride][:, :, :T_out]
    arg = windows.argmax(axis=3)  # argmax returns the first maximum
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    src = arg + np.arange(T_out)[None, None, :] * stride

    def bw(g):
        gx = np.zeros_like(x.value)
        bi, ci, _ = np.indices(src.shape)
        np.add.at(gx, (bi, ci, src), g)
        return (gx,)

    return Node(out, (x,), bw)


# ------------------------------------------------------------------ losses


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Node:
    """Mean over rows of ``-log softmax(logits)[label]`` for [N, C+1] logits."""
    logits = constant(logits)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if logits.value.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: logits must be [N, C+1], got {logits.shape}")
    N, K = logits.shape
    if N < 1:
        raise ValueError("softmax_cross_entropy: empty batch")
    if labels.shape != (N,):
        raise ValueError(f"softmax_cross_entropy: {labels.size} labels for {N} rows")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {K - 1}]")
    logp = log_softmax(logits.value)
    rows = np.arange(N)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / N),)

    return Node(loss, (logits,), bw)


def _pair(pred, target, op: str):
    pred = constant(pred)
    target = np.asarray(target.value if isinstance(target, Node) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"{op}: prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def smooth_l1(pred, target) -> Node:
    """Mean of 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, with d = pred - target."""
    pred, target = _pair(pred, target, "smooth_l1")
    d = pred.value - target
    ad = np.abs(d)
    small = ad < 1.0
    n = max(d.size, 1)
    loss = np.where(small, 0.5 * d * d, ad - 0.5).sum() / n
    return Node(loss, (pred,), lambda g: (g * np.where(small, d, np.sign(d)) / n,))


def mse(pred, target) -> Node:
    pred, target = _pair(pred, target, "mse")
    d = pred.value - target
    n = max(d.size, 1)
    return Node((d * d).sum() / n, (pred,), lambda g: (g * 2.0 * d / n,))
