"""Attribute-composable shape scenes with their rasteriser and caption grammar."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

SHAPES = ("circle", "square", "triangle", "ring", "cross")
COLORS = ("red", "green", "blue", "yellow", "white")
SIZES = ("small", "large")
POSITIONS = ("left", "right", "top", "bottom", "center")
RELATIONS = ("inside", "beside", "above")

TEMPLATE_PREFIXES = ("", "a photo of", "an image of", "this is")
POSITION_PHRASES = {
    "center": "",
    "left": "on the left",
    "right": "on the right",
    "top": "at the top",
    "bottom": "at the bottom",
}
TEMPLATE_WORDS = ("a", "an", "photo", "image", "of", "this", "is", "on", "the", "at")

RGB = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.90, 0.85, 0.10),
    "white": (0.92, 0.92, 0.92),
}
BACKGROUND = 0.2

# nominal geometry on a 32x32 canvas; scaled for other sizes
_CANVAS = 32.0
_CENTERS = {
    "center": (16.0, 16.0),
    "left": (8.5, 16.0),
    "right": (23.5, 16.0),
    "top": (16.0, 8.5),
    "bottom": (16.0, 23.5),
}
_RADIUS = {"small": 4.5, "large": 8.0}
_JITTER_PX = 1.0
_JITTER_SCALE = 0.08


def base_words() -> list[str]:
    """Every word the captioner can emit, in a fixed order."""
    words = list(TEMPLATE_WORDS)
    for group in (SIZES, COLORS, SHAPES, RELATIONS, ("left", "right", "top", "bottom")):
        words.extend(w for w in group if w not in words)
    return words


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: str
    position: str = "center"

    def validate(self) -> None:
        for value, allowed, what in ((self.shape, SHAPES, "shape"), (self.color, COLORS, "color"),
                                     (self.size, SIZES, "size"), (self.position, POSITIONS, "position")):
            if value not in allowed:
                raise SceneError(f"unknown {what} {value!r}")

    def to_dict(self) -> dict:
        return {"shape": self.shape, "color": self.color, "size": self.size, "position": self.position}


@dataclass(frozen=True)
class SceneSpec:
    """One or two objects; two-object scenes carry a spatial relation.

    Relations fix the layout: ``inside`` puts a small object at the centre of
    a large one, ``beside`` places the first object left of the second and
    ``above`` places it on top.
    """

    objects: tuple[ObjectSpec, ...]
    relation: Optional[str] = None

    def validate(self) -> None:
        if not 1 <= len(self.objects) <= 2:
            raise SceneError(f"a scene holds 1 or 2 objects, got {len(self.objects)}")
        for obj in self.objects:
            obj.validate()
        if len(self.objects) == 1:
            if self.relation is not None:
                raise SceneError("a relation needs exactly two objects")
            return
        if self.relation not in RELATIONS:
            raise SceneError(f"two-object scenes need a relation in {RELATIONS}, got {self.relation!r}")
        a, b = self.objects
        if self.relation == "inside":
            if (a.size, b.size) != ("small", "large") or a.position != "center" or b.position != "center":
                raise SceneError("'inside' needs a small centred object within a large centred one")
            if a.color == b.color:
                raise SceneError("'inside' objects must differ in color to be visible")
        elif self.relation == "beside":
            if (a.position, b.position) != ("left", "right"):
                raise SceneError("'beside' places the first object left and the second right")
        elif (a.position, b.position) != ("top", "bottom"):
            raise SceneError("'above' places the first object top and the second bottom")

    def to_dict(self) -> dict:
        return {"objects": [o.to_dict() for o in self.objects], "relation": self.relation}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(tuple(ObjectSpec(**o) for o in d["objects"]), d.get("relation"))

    def key(self) -> tuple:
        return tuple((o.shape, o.color, o.size, o.position) for o in self.objects) + (self.relation,)


def single(shape: str, color: str, size: str = "large", position: str = "center") -> SceneSpec:
    return SceneSpec((ObjectSpec(shape, color, size, position),))


# -- rasterisation --------------------------------------------------------------

def _box(px, py, hx, hy):
    qx = np.abs(px) - hx
    qy = np.abs(py) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    return outside + np.minimum(np.maximum(qx, qy), 0.0)


def _triangle(px, py, r):
    """Exact SDF of an apex-up equilateral triangle with circumradius r (Quilez)."""
    k = math.sqrt(3.0)
    half = r * k / 2.0
    x = np.abs(px) - half
    y = -py + half / k
    fold = x + k * y > 0.0
    x, y = np.where(fold, (x - k * y) / 2.0, x), np.where(fold, (-k * x - y) / 2.0, y)
    x = x - np.clip(x, -2.0 * half, 0.0)
    return -np.hypot(x, y) * np.sign(y)


def _sdf(shape: str, px: np.ndarray, py: np.ndarray, r: float) -> np.ndarray:
    if shape == "circle":
        return np.hypot(px, py) - r
    if shape == "ring":
        return np.abs(np.hypot(px, py) - 0.875 * r) - 0.125 * r
    if shape == "square":
        return _box(px, py, 0.85 * r, 0.85 * r)
    if shape == "cross":
        return np.minimum(_box(px, py, r, 0.3 * r), _box(px, py, 0.3 * r, r))
    if shape == "triangle":
        return _triangle(px, py + 0.15 * r, 1.15 * r)
    raise SceneError(f"unknown shape {shape!r}")


def render_scene(scene: SceneSpec, w: int = 32, h: int = 32, seed: int = 0) -> np.ndarray:
    """Rasterise ``scene`` into a (3, h, w) float32 image in [0, 1].

    Edges are anti-aliased with a one-pixel signed-distance ramp. ``seed``
    drives a small jitter of each object's centre and scale inside its
    nominal cell; the same (scene, seed) always yields the same image.
    """
    scene.validate()
    if w < 8 or h < 8:
        raise SceneError(f"canvas {w}x{h} is too small to render shapes")
    rng = np.random.default_rng(seed)
    sx, sy = w / _CANVAS, h / _CANVAS
    unit = min(sx, sy)
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    img = np.full((3, h, w), BACKGROUND, dtype=np.float64)

    shared = rng.uniform(-_JITTER_PX, _JITTER_PX, size=2) if scene.relation == "inside" else None
    order = list(scene.objects)
    if scene.relation == "inside":
        order = order[::-1]  # container first, contents on top
    for obj in order:
        jitter = shared if shared is not None else rng.uniform(-_JITTER_PX, _JITTER_PX, size=2)
        s = 1.0 + rng.uniform(-_JITTER_SCALE, _JITTER_SCALE)
        cx, cy = _CENTERS[obj.position]
        cx = (cx + jitter[0]) * sx
        cy = (cy + jitter[1]) * sy
        r = _RADIUS[obj.size] * s * unit
        d = _sdf(obj.shape, xs - cx, ys - cy, r)
        alpha = np.clip(0.5 - d, 0.0, 1.0)
        color = np.asarray(RGB[obj.color])[:, None, None]
        img = img * (1.0 - alpha) + color * alpha
    return img.astype(np.float32)


# -- captions -------------------------------------------------------------------

def _describe(obj: ObjectSpec) -> str:
    return f"a {obj.size} {obj.color} {obj.shape}"


def caption_scene(scene: SceneSpec, template_rng: np.random.Generator | None = None) -> str:
    """Templated caption naming every attribute of the scene."""
    scene.validate()
    prefix = ""
    if template_rng is not None:
        prefix = TEMPLATE_PREFIXES[int(template_rng.integers(len(TEMPLATE_PREFIXES)))]
    if len(scene.objects) == 1:
        obj = scene.objects[0]
        body = " ".join(p for p in (_describe(obj), POSITION_PHRASES[obj.position]) if p)
    else:
        a, b = scene.objects
        body = f"{_describe(a)} {scene.relation} {_describe(b)}"
    return f"{prefix} {body}".strip()


_RELATION_LAYOUT = {"inside": ("center", "center"), "beside": ("left", "right"), "above": ("top", "bottom")}


def parse_caption(caption: str) -> SceneSpec:
    """Inverse of :func:`caption_scene` (ignores the template prefix)."""
    words = caption.lower().split()
    for prefix in sorted(TEMPLATE_PREFIXES, key=len, reverse=True):
        pw = prefix.split()
        if pw and words[: len(pw)] == pw:
            words = words[len(pw):]
            break

    def take_object(ws: list[str]) -> tuple[dict, list[str]]:
        if len(ws) < 4 or ws[0] != "a" or ws[1] not in SIZES or ws[2] not in COLORS or ws[3] not in SHAPES:
            raise SceneError(f"cannot parse object from {' '.join(ws)!r}")
        return {"size": ws[1], "color": ws[2], "shape": ws[3]}, ws[4:]

    first, rest = take_object(words)
    if rest and rest[0] in RELATIONS:
        relation = rest[0]
        second, tail = take_object(rest[1:])
        if tail:
            raise SceneError(f"trailing words {tail!r}")
        pa, pb = _RELATION_LAYOUT[relation]
        return SceneSpec((ObjectSpec(position=pa, **first), ObjectSpec(position=pb, **second)), relation)
    phrase = " ".join(rest)
    for position, text in POSITION_PHRASES.items():
        if phrase == text:
            return SceneSpec((ObjectSpec(position=position, **first),))
    raise SceneError(f"cannot parse position phrase {phrase!r}")
