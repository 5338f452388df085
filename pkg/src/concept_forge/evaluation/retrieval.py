"""Image-text retrieval recall@k over paired held-out samples."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff import no_grad
from ..encoders.model import DualEncoder
from .zeroshot import embed_images


def ranks(sims: np.ndarray) -> np.ndarray:
    """Rank (0 = best) of the matching column ``i`` in row ``i``.

    Rows are sorted by descending similarity with a stable sort, so equal
    scores keep index order.
    """
    order = np.argsort(-sims, axis=1, kind="stable")
    return np.argmax(order == np.arange(len(sims))[:, None], axis=1)


def recall_at_k(sims: np.ndarray, ks: Sequence[int] = (1, 5, 10)) -> dict:
    """Recall table for an (N, N) image-by-caption similarity matrix."""
    sims = np.asarray(sims)
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ValueError(f"expected a square similarity matrix, got {sims.shape}")
    n = len(sims)
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive")
    if n < ks[-1]:
        raise ValueError(f"need at least {ks[-1]} pairs for recall@{ks[-1]}, got {n}")
    i2t = ranks(sims)
    t2i = ranks(sims.T)
    return {
        "image_to_text": {k: float((i2t < k).mean()) for k in ks},
        "text_to_image": {k: float((t2i < k).mean()) for k in ks},
        "n_pairs": n,
    }


def retrieval_eval(model: DualEncoder, images: np.ndarray, captions: Sequence[str],
                   ks: Sequence[int] = (1, 5, 10)) -> dict:
    """Recall@k in both directions for ``images[i]`` paired with ``captions[i]``."""
    if len(images) != len(captions):
        raise ValueError("images and captions must pair up one to one")
    if len(captions) < max(ks):
        raise ValueError(f"need at least {max(ks)} pairs, got {len(captions)}")
    img = embed_images(model, np.asarray(images, dtype=np.float32))
    with no_grad():
        txt = model.encode_captions(list(captions)).data
    return recall_at_k(img @ txt.T, ks)
