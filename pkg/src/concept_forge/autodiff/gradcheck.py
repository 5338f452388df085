"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, precision


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], wrt: int, h: float = 1e-3) -> np.ndarray:
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*[Tensor(a) for a in base]).data)
            flat[i] = orig - h
            fm = float(fn(*[Tensor(a) for a in base]).data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise relative error.

    Each element is scaled by ``max(|a|, |n|, 1e-2 * max|n|, 1e-8)`` so that
    near-zero entries of an otherwise large gradient do not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = max(1e-2 * float(np.abs(n).max(initial=0.0)), 1e-8)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max(initial=0.0))


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-3) -> float:
    """Max relative error over all inputs of ``fn`` (which must return a scalar).

    Runs in float64 so the comparison measures the derivative formulas rather
    than float32 rounding.
    """
    worst = 0.0
    with precision(np.float64):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        grads = backward(fn(*leaves), leaves)
        for i, leaf in enumerate(leaves):
            num = numeric_grad(fn, arrays, i, h)
            worst = max(worst, relative_error(grads[leaf], num))
    return worst
