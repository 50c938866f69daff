"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and, when recorded, a closure
mapping the output gradient to one gradient per input.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import ShapeMismatch, Tensor, as_tensor, make_output

LN_EPS = 1e-5
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_output(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_output(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return make_output(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape ``(..., n)`` and a 2-D ``b`` of shape ``(n, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    a2 = a.data.reshape(-1, a.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[1])
    return make_output(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax):
            raise ShapeMismatch(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_output(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def scatter_rows(num_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` rows into ``num_rows`` buckets given by ``index``.

    Deterministic: contributions are reduced in ascending (index, position)
    order.
    """
    flat_idx = np.asarray(index).reshape(-1)
    flat_val = values.reshape(flat_idx.shape[0], *values.shape[np.asarray(index).ndim :])
    out = np.zeros((num_rows, *flat_val.shape[1:]), dtype=values.dtype)
    if flat_idx.size == 0:
        return out
    order = np.argsort(flat_idx, kind="stable")
    sorted_idx = flat_idx[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(flat_val[order], starts, axis=0)
    return out


def gather_rows(x, index: np.ndarray) -> Tensor:
    """``x[index]`` along the first axis; output shape ``index.shape + x.shape[1:]``."""
    x = as_tensor(x)
    index = np.asarray(index)
    if index.size and (index.min() < -x.shape[0] or index.max() >= x.shape[0]):
        raise ShapeMismatch(f"gather_rows: index out of range for {x.shape[0]} rows")
    return make_output(
        x.data[index],
        (x,),
        lambda g: (scatter_rows(x.shape[0], index, g),),
        "gather_rows",
    )


def scatter_add(target, index: np.ndarray, values) -> Tensor:
    """``target`` plus ``values`` rows summed into positions ``index``."""
    target, values = as_tensor(target), as_tensor(values)
    index = np.asarray(index)
    if values.shape[: index.ndim] != index.shape or values.shape[index.ndim :] != target.shape[1:]:
        raise ShapeMismatch(f"scatter_add: values {values.shape} vs index {index.shape} into {target.shape}")
    out = target.data + scatter_rows(target.shape[0], index, values.data)
    return make_output(out, (target, values), lambda g: (g, g[index]), "scatter_add")


def where(mask: np.ndarray, a, b) -> Tensor:
    """Elementwise select; ``mask`` is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    zero = np.zeros((), dtype=out.dtype)

    def backward(g):
        return _unbroadcast(np.where(mask, g, zero), a.shape), _unbroadcast(np.where(mask, zero, g), b.shape)

    return make_output(out, (a, b), backward, "where")


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return make_output(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return make_output(out, (x,), lambda g: (g * (out > 0),), "relu")


def gelu(x) -> Tensor:
    """Tanh approximation of GELU."""
    x = as_tensor(x)
    u = _SQRT_2_OVER_PI * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return make_output(out, (x,), backward, "gelu")


ACTIVATIONS = {"relu": relu, "gelu": gelu}


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatch(f"layer_norm: gain {gain.shape}/bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_output(xhat * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _log_softmax(x.data, axis)
    p = np.exp(out)
    return make_output(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    p = np.exp(_log_softmax(x.data, axis))
    return make_output(p, (x,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "softmax")


def cross_entropy(logits, target, label_smoothing: float = 0.0) -> Tensor:
    """Per-row ``-log softmax(logits)[target]`` over the last axis.

    With ``label_smoothing`` ``s`` the target distribution is
    ``(1 - s) * onehot + s / C``.
    """
    logits = as_tensor(logits)
    target = np.asarray(target)
    if logits.shape[:-1] != target.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {target.shape}")
    C = logits.shape[-1]
    if target.size and (target.min() < 0 or target.max() >= C):
        raise ShapeMismatch(f"cross_entropy: target outside [0, {C})")
    logp = _log_softmax(logits.data, -1)
    q = np.zeros_like(logp)
    np.put_along_axis(q, target[..., None], 1.0, axis=-1)
    if label_smoothing:
        q = (1.0 - label_smoothing) * q + label_smoothing / C
    loss = -(q * logp).sum(-1)
    p = np.exp(logp)
    return make_output(loss, (logits,), lambda g: (g[..., None] * (p - q),), "cross_entropy")


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_output(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    scale = x.dtype.type(1.0 / n)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, x.shape).copy(),)

    return make_output(np.asarray(x.data.mean(axis=axis)), (x,), backward, "mean")
