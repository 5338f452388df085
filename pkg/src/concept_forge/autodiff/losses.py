"""Contrastive image-text objective."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor

UNIT_NORM_TOL = 1e-5


def _check_unit(name: str, emb: Tensor) -> None:
    norms = np.sqrt((emb.data.astype(np.float64) ** 2).sum(axis=-1))
    if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        raise ValueError(f"{name} must be unit-norm within {UNIT_NORM_TOL}, max deviation "
                         f"{np.abs(norms - 1.0).max():.3g}")


def similarity_logits(image_embs: Tensor, text_embs: Tensor, temperature) -> Tensor:
    """(B, K) matrix of ``temperature * cos(image, text)`` for unit embeddings."""
    sims = F.matmul(image_embs, F.transpose(text_embs))
    if isinstance(temperature, Tensor):
        return F.mul(sims, temperature)
    return F.scale(sims, float(temperature))


def info_nce(image_embs: Tensor, text_embs: Tensor, positives, temperature) -> Tensor:
    """Mean over rows of ``-log softmax(temperature * sims)[positive]``.

    ``image_embs`` is (B, n) and ``text_embs`` is (K, n), both unit rows;
    ``positives[b]`` indexes the matching caption of image ``b``. Every other
    caption acts as a negative. ``temperature`` is a positive float or a
    scalar Tensor (a trainable logit scale).
    """
    if image_embs.ndim != 2 or text_embs.ndim != 2:
        raise ValueError("info_nce expects (B, n) image and (K, n) text embeddings")
    b, k = image_embs.shape[0], text_embs.shape[0]
    if k < 2:
        raise ValueError(f"info_nce needs at least 2 captions, got {k}")
    positives = np.asarray(positives, dtype=np.int64)
    if positives.shape != (b,) or positives.min() < 0 or positives.max() >= k:
        raise ValueError(f"positives must be {b} indices in [0, {k})")
    t = float(np.reshape(temperature.data, -1)[0]) if isinstance(temperature, Tensor) else float(temperature)
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")
    _check_unit("image embeddings", image_embs)
    _check_unit("text embeddings", text_embs)

    logits = similarity_logits(image_embs, text_embs, temperature)
    logp = F.log_softmax(logits, axis=-1)
    return F.scale(F.sum(F.pick(logp, positives)), -1.0 / b)
