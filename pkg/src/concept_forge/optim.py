"""Adam with optional decoupled weight decay, plus a cosine schedule."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .autodiff import NonFiniteError, Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class Adam:
    """Adam over a named parameter dict.

    ``weight_decay`` is applied decoupled from the gradient (AdamW style):
    ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    Parameters whose gradient is absent for a step are left untouched.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[Tensor, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if lr == 0.0:
                continue
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array([self.t], dtype=np.float32)}
        for name in self.params:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(np.asarray(state["t"]).reshape(-1)[0])
        for name in self.params:
            self.m[name] = np.array(state[f"m.{name}"], dtype=self.params[name].data.dtype)
            self.v[name] = np.array(state[f"v.{name}"], dtype=self.params[name].data.dtype)
