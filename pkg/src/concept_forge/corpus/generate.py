"""Deterministic corpus generation with a held-out concept exclusion audit."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..encoders.vocab import Vocabulary
from .concepts import RESERVED_NAMES, ConceptLibrary, ConceptSpec
from .scenes import (COLORS, POSITIONS, RELATIONS, SHAPES, SIZES, ObjectSpec, SceneError, SceneSpec, base_words,
                     caption_scene, render_scene)

MANIFEST_VERSION = 1
_SPLIT_STREAMS = {"pretrain": 0, "base_test": 1, "novel_test": 2, "retrieval": 3}


class LeakageError(RuntimeError):
    """A held-out concept leaked into the pretraining data."""


@dataclass(frozen=True)
class CorpusConfig:
    n_pretrain: int = 8000
    test_per_base: int = 50
    test_per_novel: int = 20
    n_retrieval: int = 100
    single_fraction: float = 0.55
    # fraction of (color, shape) pairs allowed in pretraining; pairs used by
    # base classes or concept descriptions are always kept
    attribute_coverage: float = 1.0
    image_size: int = 32
    max_len: int = 16

    def validate(self) -> None:
        if self.n_pretrain < 1 or self.test_per_base < 1 or self.test_per_novel < 1:
            raise ValueError("corpus split sizes must be positive")
        if self.n_retrieval < 0:
            raise ValueError("n_retrieval must be non-negative")
        if not 0.0 <= self.single_fraction <= 1.0:
            raise ValueError("single_fraction must be in [0, 1]")
        if not 0.0 < self.attribute_coverage <= 1.0:
            raise ValueError("attribute_coverage must be in (0, 1]")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        return cls(**d)


@dataclass
class Sample:
    scene: SceneSpec
    seed: int
    caption: str | None = None
    label: str | None = None

    def to_dict(self) -> dict:
        d = {"scene": self.scene.to_dict(), "seed": self.seed}
        if self.caption is not None:
            d["caption"] = self.caption
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(SceneSpec.from_dict(d["scene"]), int(d["seed"]), d.get("caption"), d.get("label"))

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps([self.scene.to_dict(), self.seed], sort_keys=True).encode()).hexdigest()


def default_vocabulary(max_len: int = 16) -> Vocabulary:
    return Vocabulary(base_words=base_words(), reserved=list(RESERVED_NAMES), max_len=max_len)


@dataclass
class CorpusSplit:
    config: CorpusConfig
    seed: int
    concepts: ConceptLibrary
    vocab: Vocabulary
    pretrain: list[Sample]
    base_test: list[Sample]
    novel_test: dict[str, list[Sample]]
    retrieval: list[Sample]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def base_labels(self) -> list[str]:
        return [c.name for c in self.concepts.base]

    def images(self, split: str, concept: str | None = None) -> np.ndarray:
        """Rendered (N, 3, S, S) images for a split; cached after first use."""
        key = (split, concept)
        if key not in self._cache:
            samples = self.novel_test[concept] if split == "novel_test" else getattr(self, split)
            s = self.config.image_size
            self._cache[key] = render_samples(samples, s)
        return self._cache[key]

    def caption_bank(self) -> list[str]:
        """Negatives for transfer fine-tuning: one prompt per base class."""
        return [f"a photo of a {c.name}" for c in self.concepts.base]

    def content_hash(self) -> str:
        if "hash" not in self._cache:
            self._cache["hash"] = self.manifest()["content_hash"]
        return self._cache["hash"]

    def manifest(self) -> dict:
        body = {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "concepts": {"base": [c.to_dict() for c in self.concepts.base],
                         "held_out": [c.to_dict() for c in self.concepts.held_out]},
            "vocabulary": self.vocab.to_dict(),
            "splits": {
                "pretrain": [s.to_dict() for s in self.pretrain],
                "base_test": [s.to_dict() for s in self.base_test],
                "novel_test": {k: [s.to_dict() for s in v] for k, v in self.novel_test.items()},
                "retrieval": [s.to_dict() for s in self.retrieval],
            },
        }
        body["content_hash"] = content_hash(body)
        return body

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(json.dumps(self.manifest(), sort_keys=True))
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "CorpusSplit":
        path = Path(directory)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text())
        if data.get("version") != MANIFEST_VERSION:
            raise ValueError(f"corpus manifest version {data.get('version')} != {MANIFEST_VERSION}")
        stored = data.pop("content_hash", None)
        if stored != content_hash(data):
            raise ValueError("corpus manifest content hash mismatch")
        splits = data["splits"]
        return cls(
            config=CorpusConfig.from_dict(data["config"]),
            seed=int(data["seed"]),
            concepts=ConceptLibrary(
                base=[ConceptSpec.from_dict(c) for c in data["concepts"]["base"]],
                held_out=[ConceptSpec.from_dict(c) for c in data["concepts"]["held_out"]],
            ),
            vocab=Vocabulary.from_dict(data["vocabulary"]),
            pretrain=[Sample.from_dict(s) for s in splits["pretrain"]],
            base_test=[Sample.from_dict(s) for s in splits["base_test"]],
            novel_test={k: [Sample.from_dict(s) for s in v] for k, v in splits["novel_test"].items()},
            retrieval=[Sample.from_dict(s) for s in splits["retrieval"]],
        )


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def render_samples(samples: Sequence[Sample], size: int) -> np.ndarray:
    out = np.empty((len(samples), 3, size, size), dtype=np.float32)
    for i, s in enumerate(samples):
        out[i] = render_scene(s.scene, size, size, s.seed)
    return out


def _seed_stream(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng([seed, _SPLIT_STREAMS[split]])


def _allowed_pairs(concepts: ConceptLibrary, coverage: float, rng: np.random.Generator) -> set[tuple[str, str]]:
    all_pairs = [(c, s) for c in COLORS for s in SHAPES]
    keep = {(p.color, p.shape) for concept in concepts.base for p in concept.rule.objects}
    for concept in concepts.held_out:
        keep |= {(p.color, p.shape) for p in concept.rule.objects if p.color and p.shape}
    optional = [p for p in all_pairs if p not in keep]
    n_opt = int(round(coverage * len(optional)))
    chosen = [optional[i] for i in sorted(rng.permutation(len(optional))[:n_opt])]
    return keep | set(chosen)


def _random_object(rng, pairs: list[tuple[str, str]], size=None, position=None) -> ObjectSpec:
    color, shape = pairs[rng.integers(len(pairs))]
    return ObjectSpec(shape=shape, color=color,
                      size=size or SIZES[rng.integers(len(SIZES))],
                      position=position or POSITIONS[rng.integers(len(POSITIONS))])


def sample_pretrain_scene(rng: np.random.Generator, pairs: list[tuple[str, str]], single_fraction: float) -> SceneSpec:
    """One random scene from the pretraining distribution (may need rejection)."""
    if rng.random() < single_fraction:
        return SceneSpec((_random_object(rng, pairs),))
    relation = RELATIONS[rng.integers(len(RELATIONS))]
    if relation == "inside":
        a = _random_object(rng, pairs, "small", "center")
        b = _random_object(rng, pairs, "large", "center")
    elif relation == "beside":
        a = _random_object(rng, pairs, position="left")
        b = _random_object(rng, pairs, position="right")
    else:
        a = _random_object(rng, pairs, position="top")
        b = _random_object(rng, pairs, position="bottom")
    return SceneSpec((a, b), relation)


def generate_corpus(config: CorpusConfig, seed: int, concepts: ConceptLibrary | None = None) -> CorpusSplit:
    """Build pretraining pairs and evaluation sets.

    Pretraining scenes are drawn from all attribute combinations except those
    matched by a held-out concept's render rule; reserved name tokens never
    appear in pretraining captions.
    """
    config.validate()
    concepts = concepts or ConceptLibrary()
    if len(concepts.base) < 8:
        raise ValueError(f"need at least 8 base classes, got {len(concepts.base)}")
    if not concepts.held_out:
        raise ValueError("need at least one held-out concept")
    vocab = default_vocabulary(config.max_len)
    for c in concepts.all():
        c.validate(vocab)
    names = [c.name for c in concepts.all()]
    if len(set(names)) != len(names):
        raise ValueError("concept names must be unique")

    pair_rng = np.random.default_rng([seed, 99])
    pairs = sorted(_allowed_pairs(concepts, config.attribute_coverage, pair_rng))

    rng = _seed_stream(seed, "pretrain")
    template_rng = np.random.default_rng([seed, 100])
    pretrain: list[Sample] = []
    while len(pretrain) < config.n_pretrain:
        scene = sample_pretrain_scene(rng, pairs, config.single_fraction)
        render_seed = int(rng.integers(2**31))
        try:
            scene.validate()
        except SceneError:
            continue
        if any(c.rule.matches(scene) for c in concepts.held_out):
            continue
        pretrain.append(Sample(scene, render_seed, caption=caption_scene(scene, template_rng)))

    rng = _seed_stream(seed, "base_test")
    base_test = []
    for concept in concepts.base:
        for _ in range(config.test_per_base):
            base_test.append(Sample(concept.rule.sample(rng), int(rng.integers(2**31)), label=concept.name))

    rng = _seed_stream(seed, "novel_test")
    novel_test = {c.name: [Sample(c.rule.sample(rng), int(rng.integers(2**31)), label=c.name)
                           for _ in range(config.test_per_novel)]
                  for c in concepts.held_out}

    rng = _seed_stream(seed, "retrieval")
    retrieval = []
    while len(retrieval) < config.n_retrieval:
        scene = sample_pretrain_scene(rng, pairs, config.single_fraction)
        render_seed = int(rng.integers(2**31))
        try:
            scene.validate()
        except SceneError:
            continue
        if any(c.rule.matches(scene) for c in concepts.held_out):
            continue
        retrieval.append(Sample(scene, render_seed, caption=caption_scene(scene, None)))

    split = CorpusSplit(config, seed, concepts, vocab, pretrain, base_test, novel_test, retrieval)
    audit_exclusion(split)
    audit_disjoint(split)
    return split


def audit_exclusion(split: CorpusSplit) -> dict:
    """Scan every pretraining pair for reserved tokens and held-out scenes.

    Raises :class:`LeakageError` on any hit; returns the scan counts.
    """
    reserved = set(split.vocab.reserved)
    token_hits = sum(1 for s in split.pretrain if reserved & set(s.caption.split()))
    scene_hits = sum(1 for s in split.pretrain for c in split.concepts.held_out if c.rule.matches(s.scene))
    report = {"pairs_scanned": len(split.pretrain), "reserved_token_hits": token_hits, "held_out_scene_hits": scene_hits}
    if token_hits or scene_hits:
        raise LeakageError(f"held-out leakage detected: {report}")
    return report


def audit_disjoint(split: CorpusSplit) -> None:
    train = {s.fingerprint() for s in split.pretrain}
    tests: Iterable[Sample] = [*split.base_test, *split.retrieval,
                               *(s for v in split.novel_test.values() for s in v)]
    overlap = [s for s in tests if s.fingerprint() in train]
    if overlap:
        raise LeakageError(f"{len(overlap)} evaluation samples duplicate pretraining samples")
