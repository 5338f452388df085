"""Contrastive pretraining of the dual encoder on the synthetic corpus."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..autodiff import NonFiniteError, Tensor, backward, info_nce
from ..autodiff import functional as F
from ..encoders.model import DualEncoder
from ..optim import Adam, cosine_lr
from .generate import CorpusSplit

log = logging.getLogger(__name__)

MAX_LOGIT_SCALE = 100.0


@dataclass(frozen=True)
class PretrainConfig:
    lr: float = 3e-4
    batch_size: int = 64
    epochs: int = 30
    weight_decay: float = 0.0
    warmup_steps: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("pretraining lr must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (in-batch negatives)")
        if self.epochs < 0 or self.warmup_steps < 0 or self.weight_decay < 0:
            raise ValueError("epochs, warmup_steps and weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return cls(**d)


@dataclass
class PretrainState:
    step: int = 0
    losses: list[float] = field(default_factory=list)
    reserved_grad_norm: float = 0.0
    base_accuracy: float | None = None


def lr_at(cfg: PretrainConfig, step: int, total: int) -> float:
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    return cosine_lr(cfg.lr, step - cfg.warmup_steps, max(total - cfg.warmup_steps, 1))


def batch_order(seed: int, epoch: int, n: int, batch_size: int) -> list[np.ndarray]:
    """Deterministic per-epoch shuffled batches; a trailing partial batch is dropped."""
    perm = np.random.default_rng([seed, 7, epoch]).permutation(n)
    return [perm[i: i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def contrastive_step_loss(model: DualEncoder, images: np.ndarray, captions: list[list[int]]) -> Tensor:
    """Symmetric in-batch InfoNCE with the model's trainable logit scale."""
    img = model.encode_images(images)
    txt = model.encode_texts(captions)
    scale = F.exp(model.log_temperature)
    pos = np.arange(len(captions))
    i2t = info_nce(img, txt, pos, scale)
    t2i = info_nce(txt, img, pos, scale)
    return F.scale(F.add(i2t, t2i), 0.5)


def pretrain(model: DualEncoder, corpus: CorpusSplit, cfg: PretrainConfig, optimizer: Adam | None = None,
             state: PretrainState | None = None, on_epoch: Callable[[int, PretrainState], None] | None = None,
             stop_after_steps: int | None = None) -> tuple[DualEncoder, Adam, PretrainState]:
    """Train both encoders and the logit scale in place.

    Passing back the ``optimizer`` and ``state`` from an interrupted run
    resumes exactly where it stopped. The accumulated gradient norm of the
    reserved name-token rows is tracked and must stay at zero.
    """
    cfg.validate()
    params = dict(model.named_parameters())
    if optimizer is None:
        optimizer = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    state = state or PretrainState()
    images = corpus.images("pretrain")
    captions = [model.vocab.tokenize(s.caption) for s in corpus.pretrain]
    reserved = np.asarray(model.vocab.reserved_ids())
    tok = model.text_params["tok"]
    n = len(captions)
    per_epoch = n // cfg.batch_size
    total = per_epoch * cfg.epochs
    max_log_scale = math.log(MAX_LOGIT_SCALE)

    t0 = time.perf_counter()
    while state.step < total:
        epoch, within = divmod(state.step, per_epoch)
        idx = batch_order(cfg.seed, epoch, n, cfg.batch_size)[within]
        for p in params.values():
            p.zero_grad()
        loss = contrastive_step_loss(model, images[idx], [captions[i] for i in idx])
        if not np.isfinite(loss.data).all():
            raise NonFiniteError(f"pretraining diverged at step {state.step}")
        grads = backward(loss, inputs=params.values())
        state.reserved_grad_norm += float(np.linalg.norm(grads[tok][reserved]))
        optimizer.step(grads, lr=lr_at(cfg, state.step, total))
        if model.log_temperature.data > max_log_scale:
            model.log_temperature.data = np.minimum(model.log_temperature.data, np.float32(max_log_scale))
        state.losses.append(float(loss.data))
        state.step += 1
        if state.step % per_epoch == 0:
            recent = float(np.mean(state.losses[-per_epoch:]))
            log.info("epoch=%d step=%d loss=%.4f scale=%.2f elapsed=%.1fs", epoch + 1, state.step, recent,
                     model.temperature, time.perf_counter() - t0)
            if on_epoch is not None:
                on_epoch(epoch + 1, state)
        if stop_after_steps is not None and state.step >= stop_after_steps:
            break
    if state.reserved_grad_norm != 0.0:
        raise RuntimeError(f"reserved token rows received gradient (norm {state.reserved_grad_norm})")
    return model, optimizer, state
