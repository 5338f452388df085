"""Named concepts: base classes and held-out composites."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scenes import COLORS, POSITIONS, SHAPES, SIZES, ObjectSpec, SceneError, SceneSpec

RESERVED_NAMES = ("wug", "blick", "dax", "fep", "toma", "zup", "kiki", "bouba")


@dataclass(frozen=True)
class ObjectPattern:
    """Constraint on one object; ``None`` fields are free."""

    shape: Optional[str] = None
    color: Optional[str] = None
    size: Optional[str] = None

    def matches(self, obj: ObjectSpec) -> bool:
        return ((self.shape is None or obj.shape == self.shape)
                and (self.color is None or obj.color == self.color)
                and (self.size is None or obj.size == self.size))

    def to_dict(self) -> dict:
        return {k: v for k, v in (("shape", self.shape), ("color", self.color), ("size", self.size)) if v is not None}


@dataclass(frozen=True)
class RenderRule:
    """Predicate over scenes plus a sampler for scenes that satisfy it."""

    objects: tuple[ObjectPattern, ...]
    relation: Optional[str] = None

    def matches(self, scene: SceneSpec) -> bool:
        if scene.relation != self.relation or len(scene.objects) != len(self.objects):
            return False
        return all(p.matches(o) for p, o in zip(self.objects, scene.objects))

    def sample(self, rng: np.random.Generator) -> SceneSpec:
        layout = {None: None, "inside": ("center", "center"), "beside": ("left", "right"),
                  "above": ("top", "bottom")}[self.relation]
        forced_size = ("small", "large") if self.relation == "inside" else None
        for _ in range(100):
            objs = []
            for i, pat in enumerate(self.objects):
                size = pat.size or (forced_size[i] if forced_size else SIZES[rng.integers(len(SIZES))])
                pos = layout[i] if layout else POSITIONS[rng.integers(len(POSITIONS))]
                objs.append(ObjectSpec(
                    shape=pat.shape or SHAPES[rng.integers(len(SHAPES))],
                    color=pat.color or COLORS[rng.integers(len(COLORS))],
                    size=size, position=pos))
            scene = SceneSpec(tuple(objs), self.relation)
            try:
                scene.validate()
            except SceneError:
                continue
            return scene
        raise SceneError(f"render rule {self.to_dict()} admits no valid scene")

    def to_dict(self) -> dict:
        return {"objects": [p.to_dict() for p in self.objects], "relation": self.relation}

    @classmethod
    def from_dict(cls, d: dict) -> "RenderRule":
        return cls(tuple(ObjectPattern(**p) for p in d["objects"]), d.get("relation"))


@dataclass(frozen=True)
class ConceptSpec:
    """A named visual concept.

    Base concepts are named with ordinary vocabulary words (``"red circle"``);
    held-out concepts must be named with a single reserved token.
    """

    name: str
    description: str
    rule: RenderRule
    split: str = "base"

    def validate(self, vocab=None) -> None:
        if self.split not in ("base", "held_out"):
            raise ValueError(f"concept split must be 'base' or 'held_out', got {self.split!r}")
        if self.split == "held_out":
            reserved = vocab.is_reserved(self.name) if vocab is not None else self.name in RESERVED_NAMES
            if len(self.name.split()) != 1 or not reserved:
                raise ValueError(f"held-out concept {self.name!r} must be named by a single reserved token "
                                 f"(one of {', '.join(vocab.reserved if vocab is not None else RESERVED_NAMES)})")
            if self.name in self.description.lower().split():
                raise ValueError("a held-out concept's description must not use its own name")
        if not self.description.strip():
            raise ValueError(f"concept {self.name!r} has an empty description")
        if vocab is not None:
            reserved_used = [w for w in self.description.lower().split() if vocab.is_reserved(w)]
            if reserved_used:
                raise ValueError(f"description of {self.name!r} uses reserved tokens {reserved_used}")
            vocab.tokenize(self.description)

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description, "rule": self.rule.to_dict(), "split": self.split}

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptSpec":
        return cls(d["name"], d["description"], RenderRule.from_dict(d["rule"]), d.get("split", "base"))


def base_concept(color: str, shape: str) -> ConceptSpec:
    return ConceptSpec(
        name=f"{color} {shape}",
        description=f"a {color} {shape}",
        rule=RenderRule((ObjectPattern(shape=shape, color=color),)),
        split="base",
    )


DEFAULT_BASE_PAIRS = (
    ("red", "circle"), ("red", "square"), ("red", "ring"),
    ("blue", "square"), ("blue", "triangle"), ("blue", "circle"),
    ("green", "triangle"), ("green", "cross"),
    ("yellow", "ring"), ("yellow", "circle"),
    ("white", "cross"), ("white", "square"),
)


def default_base_concepts() -> list[ConceptSpec]:
    return [base_concept(c, s) for c, s in DEFAULT_BASE_PAIRS]


WUG = ConceptSpec(
    name="wug",
    description="a small red circle inside a large blue square",
    rule=RenderRule((ObjectPattern("circle", "red", "small"), ObjectPattern("square", "blue", "large")), "inside"),
    split="held_out",
)

BLICK = ConceptSpec(
    name="blick",
    description="a large yellow ring beside a small green triangle",
    rule=RenderRule((ObjectPattern("ring", "yellow", "large"), ObjectPattern("triangle", "green", "small")), "beside"),
    split="held_out",
)


def default_held_out_concepts() -> list[ConceptSpec]:
    return [WUG, BLICK]


@dataclass
class ConceptLibrary:
    base: list[ConceptSpec] = field(default_factory=default_base_concepts)
    held_out: list[ConceptSpec] = field(default_factory=default_held_out_concepts)

    def all(self) -> list[ConceptSpec]:
        return [*self.base, *self.held_out]

    def get(self, name: str) -> ConceptSpec:
        for c in self.all():
            if c.name == name:
                return c
        raise KeyError(f"unknown concept {name!r}; available: {', '.join(c.name for c in self.all())}")
