"""Reverse-mode tape and the array type that lives on it.

Every :class:`Tensor` produced by a differentiable kernel records its parents
and a closure mapping the output gradient to parent gradients. Nodes carry a
monotonically increasing creation index, so sorting reachable nodes by that
index in descending order is a valid reverse topological order.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

_counter = itertools.count()
_dtype: type = np.float32
_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a forward value or a gradient."""


def get_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def precision(dtype: type) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors.

    The pipeline always runs in float32; float64 is only used by the gradient
    checker so finite differences are not swamped by rounding.
    """
    global _dtype
    prev = _dtype
    _dtype = dtype
    try:
        yield
    finally:
        _dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction (evaluation-only forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An n-d float array that can participate in a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_index")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim and 0 in arr.shape:
            raise ValueError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._index = next(_counter)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=_dtype)
        out.grad = None
        out.name = None
        out._index = next(_counter)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        else:
            out._parents = ()
            out._backward = None
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar; kernels live in functional.py ------------------------

    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


def _raise_not_scalar(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append(parent)
    # parents are always created before children
    nodes.sort(key=lambda t: t._index, reverse=True)
    return nodes


def backward(loss: Tensor, inputs: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(node) through the tape.

    Populates ``.grad`` on every requires-grad leaf reachable from ``loss``
    and returns a ``{leaf: gradient}`` mapping. Leaves listed in ``inputs``
    that the loss does not depend on get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"loss is not finite: {loss.data}")

    grads: dict[int, np.ndarray] = {}
    result: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in _topological_order(loss):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if not np.isfinite(g).all():
                    raise NonFiniteError(f"non-finite gradient reached {node!r}")
                g = g.astype(_dtype, copy=False)
                node.grad = g if node.grad is None else node.grad + g
                result[node] = node.grad
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if inputs is not None:
        for leaf in inputs:
            if leaf not in result:
                leaf.grad = np.zeros_like(leaf.data)
                result[leaf] = leaf.grad
    return result
