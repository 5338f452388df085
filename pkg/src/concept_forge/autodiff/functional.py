"""Differentiable kernels.

Each kernel computes its forward value with numpy and registers a closure
that maps the output gradient to gradients for its parents.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, get_dtype

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-differentiable) scalar."""
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor._from_op(a.data * c, (a,), backward, "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), backward, "exp")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (a,), backward, "sigmoid")


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    t = np.tanh(x * (_GELU_C + (_GELU_C * 0.044715) * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) c (1 + 3 k x^2)
        d = 1.0 - t * t
        d *= x
        d *= _GELU_C * 0.5 + (_GELU_C * 0.5 * 3 * 0.044715) * x2
        d += 0.5 * (1.0 + t)
        d *= g
        return (d,)

    return Tensor._from_op(out, (a,), backward, "gelu")


# -- shape -------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return Tensor._from_op(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(a.data.transpose(axes), (a,), backward, "transpose")


def take_rows(a: Tensor, index) -> Tensor:
    """Select ``a[index]`` along the first axis."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(a.data[index], (a,), backward, "take_rows")


def pick(a: Tensor, cols) -> Tensor:
    """For a 2-d tensor return ``a[i, cols[i]]`` for every row ``i``."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        out[rows, cols] = g
        return (out,)

    return Tensor._from_op(a.data[rows, cols], (a,), backward, "pick")


# -- reductions ----------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Mean pooling over ``axis`` (all axes when None)."""
    src = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([src[ax] for ax in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return Tensor._from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward, "mean")


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of a (B, T, D) tensor, counting only positions where
    ``mask`` (B, T) is nonzero."""
    mask = np.asarray(mask, dtype=get_dtype())
    counts = mask.sum(axis=1, keepdims=True)
    if (counts <= 0).any():
        raise ValueError("masked_mean: every row needs at least one unmasked position")
    weights = (mask / counts)[:, :, None]

    def backward(g):
        return (g[:, None, :] * weights,)

    return Tensor._from_op((a.data * weights).sum(axis=1), (a,), backward, "masked_mean")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 and b.ndim == 2:
        return _matmul_flat(a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def _matmul_flat(a: Tensor, b: Tensor) -> Tensor:
    # (..., k) @ (k, m) as one 2-d GEMM; avoids a batched weight gradient
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return Tensor._from_op((a2 @ b.data).reshape(*lead, b.shape[1]), (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# -- normalisation / probability ----------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine (gamma, beta)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = a.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return Tensor._from_op(out, (a,), backward, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows of a (B, n) and b (K, n)."""
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup; only the rows actually indexed receive gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g):
        out = np.zeros(weight.shape, dtype=g.dtype)
        flat = ids.reshape(-1)
        gflat = g.reshape(flat.size, -1)
        # bincount per column is much faster than np.add.at
        for col in range(weight.shape[1]):
            out[:, col] = np.bincount(flat, weights=gflat[:, col], minlength=weight.shape[0])
        return (out,)

    return Tensor._from_op(weight.data[ids], (weight,), backward, "embedding")
