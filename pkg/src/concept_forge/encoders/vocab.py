from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD = "<pad>"


class TokenizeError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Word-level vocabulary with a padding id and a block of reserved name tokens.

    Layout: id 0 is padding, then the base words, then the reserved concept
    tokens. Reserved tokens are never emitted by the pretraining captioner, so
    their embedding rows keep their initial values through pretraining.
    """

    base_words: list[str]
    reserved: list[str]
    max_len: int = 16
    _ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        words = [PAD, *self.base_words, *self.reserved]
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        for w in words[1:]:
            if not w or w != w.lower() or any(ch.isspace() for ch in w):
                raise ValueError(f"vocabulary word {w!r} must be a single lowercase token")
        self._ids = {w: i for i, w in enumerate(words)}

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def words(self) -> list[str]:
        return [PAD, *self.base_words, *self.reserved]

    def id(self, word: str) -> int:
        return self._ids[word]

    def reserved_ids(self) -> list[int]:
        return [self._ids[w] for w in self.reserved]

    def is_reserved(self, word: str) -> bool:
        return word in self.reserved

    def tokenize(self, text: str) -> list[int]:
        words = text.lower().split()
        unknown = [w for w in words if w not in self._ids or w == PAD]
        if unknown:
            raise TokenizeError(f"out-of-vocabulary word(s): {', '.join(repr(w) for w in unknown)}")
        if len(words) > self.max_len:
            raise TokenizeError(f"sequence of {len(words)} tokens exceeds max length {self.max_len}")
        return [self._ids[w] for w in words]

    def decode(self, ids: Iterable[int]) -> str:
        words = self.words
        return " ".join(words[i] for i in ids if i != self.pad_id)

    def to_dict(self) -> dict:
        return {"base_words": list(self.base_words), "reserved": list(self.reserved), "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(base_words=list(d["base_words"]), reserved=list(d["reserved"]), max_len=int(d["max_len"]))


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Whitespace/lowercase tokenisation; raises on unknown words or overflow."""
    return vocab.tokenize(text)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: int | None = None):
    """Right-pad token sequences into an id matrix plus a 0/1 validity mask."""
    import numpy as np

    width = length if length is not None else max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float32)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask
