"""Contrastive fine-tuning on inverted images with name-prefixed captions."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..autodiff import NonFiniteError, backward, info_nce
from ..autodiff import functional as F
from ..encoders.model import DualEncoder
from ..optim import Adam
from .inversion import InvertedSet

log = logging.getLogger(__name__)


class NegativeOverlapError(ValueError):
    """The negative caption bank contains one of the concept's own captions."""


def build_transfer_caption(name: str, description: str) -> str:
    """``"a <name> is <description>"``, lowercased."""
    name = " ".join(name.lower().split())
    description = " ".join(description.lower().split())
    if not name:
        raise ValueError("concept name is empty")
    if not description:
        raise ValueError(f"concept {name!r} has an empty description")
    return f"a {name} is {description}"


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 2e-5
    weight_decay: float = 0.2
    batch_size: int = 4
    epochs: int = 1
    freeze_text: bool = True
    freeze_vision: bool = False
    freeze_temperature: bool = True
    use_name_prefix: bool = True
    n_negatives: int | None = None  # None: the whole bank in every batch
    seed: int = 0

    def validate(self) -> None:
        if self.freeze_text and self.freeze_vision:
            raise ValueError("at least one of the vision/text encoders must be trainable")
        if self.lr < 0:
            raise ValueError("fine-tuning lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.n_negatives is not None and self.n_negatives < 1:
            raise ValueError("n_negatives must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneConfig":
        return cls(**d)


def positive_caption(name: str, description: str, use_name_prefix: bool) -> str:
    return build_transfer_caption(name, description) if use_name_prefix else " ".join(description.lower().split())


def check_negatives(model: DualEncoder, negatives: Sequence[str], own_captions: Sequence[str]) -> list[list[int]]:
    """Tokenise the bank and enforce that it shares no caption with the concept."""
    if not negatives:
        raise ValueError("negative caption bank is empty")
    own = {tuple(model.vocab.tokenize(c)) for c in own_captions}
    seqs = [model.vocab.tokenize(c) for c in negatives]
    clash = [c for c, s in zip(negatives, seqs) if tuple(s) in own]
    if clash:
        raise NegativeOverlapError(f"negative bank overlaps the concept captions: {clash}")
    return seqs


def trainable_parameters(model: DualEncoder, cfg: FinetuneConfig) -> dict:
    groups = model.parameter_groups()
    params = {}
    if not cfg.freeze_vision:
        params.update(groups["vision"])
    if not cfg.freeze_text:
        params.update(groups["text"])
    if not cfg.freeze_temperature:
        params.update(groups["temperature"])
    return params


def finetune_transfer(model: DualEncoder, inverted: InvertedSet, name: str, negatives: Sequence[str],
                      cfg: FinetuneConfig, batch_order: Sequence[np.ndarray] | None = None
                      ) -> tuple[DualEncoder, list[float]]:
    """Fine-tune a copy of ``model``; returns it with the per-step loss trace.

    Every batch contrasts its inverted images against the positive caption
    (index 0) and the negative bank. Only unfrozen groups are handed to the
    optimizer, so frozen groups are bit-identical afterwards.
    """
    cfg.validate()
    if len(inverted) == 0:
        raise ValueError("inverted set is empty")
    caption = positive_caption(name, inverted.description, cfg.use_name_prefix)
    own = [caption, inverted.description, build_transfer_caption(name, inverted.description)]
    neg_seqs = check_negatives(model, negatives, own)
    pos_seq = model.vocab.tokenize(caption)

    out = model.copy()
    params = trainable_parameters(out, cfg)
    trainable = {id(t) for t in params.values()}
    for _, t in out.named_parameters():
        t.requires_grad = id(t) in trainable
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 11])
    trace: list[float] = []
    n = len(inverted)
    for epoch in range(cfg.epochs):
        if batch_order is None:
            perm = rng.permutation(n)
            batches = [perm[i: i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        else:
            batches = [np.asarray(b) for b in batch_order]
        for idx in batches:
            if cfg.n_negatives is not None and cfg.n_negatives < len(neg_seqs):
                pick = np.sort(rng.choice(len(neg_seqs), cfg.n_negatives, replace=False))
                negs = [neg_seqs[i] for i in pick]
            else:
                negs = neg_seqs
            loss = transfer_loss(out, inverted.images[idx], pos_seq, negs)
            if not np.isfinite(loss.data).all():
                raise NonFiniteError("fine-tuning loss is not finite")
            grads = backward(loss)
            opt.step(grads)
            for t in params.values():
                t.grad = None
            trace.append(float(loss.data))
    for _, t in out.named_parameters():
        t.requires_grad = True
    log.info("finetune name=%s lr=%g steps=%d loss_first=%.4f loss_last=%.4f", name, cfg.lr, len(trace),
             trace[0] if trace else float("nan"), trace[-1] if trace else float("nan"))
    return out, trace


def transfer_loss(model: DualEncoder, images: np.ndarray, positive: list[int], negatives: list[list[int]]):
    """InfoNCE of every image against [positive, *negatives] with the model's logit scale."""
    img = model.encode_images(images)
    txt = model.encode_texts([positive, *negatives])
    scale = F.exp(model.log_temperature) if model.log_temperature.requires_grad else model.temperature
    return info_nce(img, txt, np.zeros(len(images), dtype=np.int64), scale)
