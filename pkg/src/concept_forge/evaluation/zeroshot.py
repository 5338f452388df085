"""Prompt-based zero-shot classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..autodiff import no_grad
from ..encoders.model import DualEncoder

PROMPT_TEMPLATE = "a photo of a {}"
_EVAL_BATCH = 256


@dataclass
class PromptSet:
    """Class labels with one or more prompt captions each.

    Multi-prompt classes are represented by the re-normalised mean of their
    unit prompt embeddings.
    """

    labels: list[str]
    prompts: dict[str, list[str]]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("prompt set is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("prompt labels must be unique")
        for lab in self.labels:
            if not self.prompts.get(lab):
                raise ValueError(f"class {lab!r} has no prompts")

    @classmethod
    def from_labels(cls, labels: Sequence[str], template: str = PROMPT_TEMPLATE) -> "PromptSet":
        labels = list(labels)
        return cls(labels, {lab: [template.format(lab)] for lab in labels})

    @classmethod
    def from_mapping(cls, prompts: Mapping[str, Sequence[str]]) -> "PromptSet":
        return cls(list(prompts), {k: list(v) for k, v in prompts.items()})

    def embeddings(self, model: DualEncoder) -> np.ndarray:
        """(C, n) class embeddings for ``model``; cached per model snapshot."""
        from ..encoders.checkpoint import model_hash

        key = model_hash(model)
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = class_embeddings(model, self)
        return self._cache[key]


def class_embeddings(model: DualEncoder, prompts: PromptSet) -> np.ndarray:
    flat = [p for lab in prompts.labels for p in prompts.prompts[lab]]
    with no_grad():
        emb = model.encode_captions(flat).data.astype(np.float64)
    out, i = [], 0
    for lab in prompts.labels:
        k = len(prompts.prompts[lab])
        m = emb[i: i + k].mean(axis=0)
        out.append(m / np.linalg.norm(m))
        i += k
    return np.stack(out).astype(np.float32)


def embed_images(model: DualEncoder, images: np.ndarray) -> np.ndarray:
    """Unit embeddings of an (N, 3, H, W) batch, computed in chunks."""
    out = []
    with no_grad():
        for i in range(0, len(images), _EVAL_BATCH):
            out.append(model.encode_images(images[i: i + _EVAL_BATCH]).data)
    return np.concatenate(out)


def argmax_lowest(sims: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest column index."""
    return np.argmax(sims, axis=-1)  # numpy returns the first maximum


def zero_shot_classify(model: DualEncoder, images: np.ndarray, prompts: PromptSet) -> tuple[list[str], np.ndarray]:
    """Predict a label for each image (or a single (3, H, W) image).

    Returns the predicted labels and the (N, C) cosine-similarity matrix.
    """
    if not prompts.labels:
        raise ValueError("prompt set is empty")
    images = np.asarray(images, dtype=np.float32)
    single = images.ndim == 3
    if single:
        images = images[None]
    sims = embed_images(model, images) @ prompts.embeddings(model).T
    idx = argmax_lowest(sims)
    labels = [prompts.labels[i] for i in idx]
    return (labels[:1], sims[:1]) if single else (labels, sims)


def accuracy(model: DualEncoder, images: np.ndarray, labels: Sequence[str], prompts: PromptSet) -> tuple[float, dict]:
    """Overall accuracy and a per-class ``{label: [correct, total]}`` table."""
    if len(images) == 0:
        raise ValueError("empty test set")
    preds, _ = zero_shot_classify(model, images, prompts)
    table: dict[str, list[int]] = {}
    for p, y in zip(preds, labels):
        row = table.setdefault(y, [0, 0])
        row[0] += int(p == y)
        row[1] += 1
    correct = sum(r[0] for r in table.values())
    return correct / len(labels), table
