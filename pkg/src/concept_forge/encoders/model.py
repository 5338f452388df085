"""Compact dual encoder: a patch transformer for images and a word transformer
for captions, both projecting into a shared unit-norm embedding space."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from ..autodiff import NonFiniteError, Tensor
from ..autodiff import functional as F
from .vocab import Vocabulary, pad_batch

MASK_VALUE = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    vision_width: int = 64
    vision_depth: int = 3
    vision_heads: int = 4
    text_width: int = 64
    text_depth: int = 2
    text_heads: int = 4
    embed_dim: int = 64
    mlp_ratio: int = 2
    token_init_std: float = 3.0
    init_temperature: float = 0.07
    text_pool: str = "mean_then_ln"  # or "ln_then_mean"

    def validate(self) -> None:
        if self.text_pool not in ("ln_then_mean", "mean_then_ln"):
            raise ValueError(f"unknown text_pool {self.text_pool!r}")
        for k, v in asdict(self).items():
            if isinstance(v, str):
                continue
            if v <= 0:
                raise ValueError(f"encoder config {k} must be positive, got {v}")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.vision_width % self.vision_heads or self.text_width % self.text_heads:
            raise ValueError("widths must be divisible by the number of heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _init_block(rng, prefix: str, width: int, mlp_ratio: int) -> dict[str, np.ndarray]:
    hidden = width * mlp_ratio
    p = {
        f"{prefix}.ln1.g": np.ones(width, np.float32), f"{prefix}.ln1.b": np.zeros(width, np.float32),
        f"{prefix}.ln2.g": np.ones(width, np.float32), f"{prefix}.ln2.b": np.zeros(width, np.float32),
    }
    for name in ("q", "k", "v", "o"):
        p[f"{prefix}.{name}.w"] = _uniform(rng, width, (width, width))
        p[f"{prefix}.{name}.b"] = np.zeros(width, np.float32)
    p[f"{prefix}.fc1.w"] = _uniform(rng, width, (width, hidden))
    p[f"{prefix}.fc1.b"] = np.zeros(hidden, np.float32)
    p[f"{prefix}.fc2.w"] = _uniform(rng, hidden, (hidden, width))
    p[f"{prefix}.fc2.b"] = np.zeros(width, np.float32)
    return p


def _block(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int, mask_bias: np.ndarray | None) -> Tensor:
    b, t, d = x.shape
    dh = d // heads
    h = F.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])

    def split(name):
        y = F.linear(h, p[f"{prefix}.{name}.w"], p[f"{prefix}.{name}.b"])
        return F.transpose(F.reshape(y, (b, t, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if mask_bias is not None:
        scores = F.add(scores, Tensor(mask_bias))
    attn = F.matmul(F.softmax(scores, axis=-1), v)
    attn = F.reshape(F.transpose(attn, (0, 2, 1, 3)), (b, t, d))
    x = F.add(x, F.linear(attn, p[f"{prefix}.o.w"], p[f"{prefix}.o.b"]))

    h = F.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = F.gelu(F.linear(h, p[f"{prefix}.fc1.w"], p[f"{prefix}.fc1.b"]))
    return F.add(x, F.linear(h, p[f"{prefix}.fc2.w"], p[f"{prefix}.fc2.b"]))


class VisionEncoder:
    """Patch-embedding transformer with mean pooling over patches."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @staticmethod
    def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
        d = cfg.vision_width
        patch_dim = cfg.channels * cfg.patch_size ** 2
        p = {
            "patch.w": _uniform(rng, patch_dim, (patch_dim, d)),
            "patch.b": np.zeros(d, np.float32),
            "pos": (0.02 * rng.standard_normal((cfg.num_patches, d))).astype(np.float32),
        }
        for i in range(cfg.vision_depth):
            p.update(_init_block(rng, f"blocks.{i}", d, cfg.mlp_ratio))
        p["ln_f.g"] = np.ones(d, np.float32)
        p["ln_f.b"] = np.zeros(d, np.float32)
        p["proj.w"] = _uniform(rng, d, (d, cfg.embed_dim))
        return p

    def patchify(self, images: Tensor) -> Tensor:
        cfg = self.cfg
        n = images.shape[0]
        g = cfg.image_size // cfg.patch_size
        ps = cfg.patch_size
        x = F.reshape(images, (n, cfg.channels, g, ps, g, ps))
        x = F.transpose(x, (0, 2, 4, 1, 3, 5))
        return F.reshape(x, (n, g * g, cfg.channels * ps * ps))

    def __call__(self, images: Tensor) -> Tensor:
        cfg, p = self.cfg, self.params
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ValueError(f"expected images of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {images.shape}")
        if not np.isfinite(images.data).all():
            raise NonFiniteError("input image contains non-finite pixels")
        x = F.linear(self.patchify(images), p["patch.w"], p["patch.b"])
        x = F.add(x, p["pos"])
        for i in range(cfg.vision_depth):
            x = _block(x, p, f"blocks.{i}", cfg.vision_heads, None)
        x = F.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        return F.l2_normalize(F.matmul(F.mean(x, axis=1), p["proj.w"]))


class TextEncoder:
    """Word-embedding transformer with padding-aware mean pooling."""

    def __init__(self, cfg: EncoderConfig, vocab: Vocabulary, params: dict[str, Tensor]):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params

    @staticmethod
    def init_params(cfg: EncoderConfig, vocab: Vocabulary, rng: np.random.Generator) -> dict[str, np.ndarray]:
        d = cfg.text_width
        p = {
            "tok": (cfg.token_init_std * rng.standard_normal((len(vocab), d))).astype(np.float32),
            "pos": (0.02 * rng.standard_normal((vocab.max_len, d))).astype(np.float32),
        }
        for i in range(cfg.text_depth):
            p.update(_init_block(rng, f"blocks.{i}", d, cfg.mlp_ratio))
        p["ln_f.g"] = np.ones(d, np.float32)
        p["ln_f.b"] = np.zeros(d, np.float32)
        p["proj.w"] = _uniform(rng, d, (d, cfg.embed_dim))
        return p

    def __call__(self, seqs: Sequence[Sequence[int]], pad_to: int | None = None) -> Tensor:
        cfg, p = self.cfg, self.params
        if not seqs:
            raise ValueError("no sequences to encode")
        for s in seqs:
            if len(s) == 0:
                raise ValueError("cannot encode an empty token sequence")
            if len(s) > self.vocab.max_len:
                raise ValueError(f"token sequence of length {len(s)} exceeds max length {self.vocab.max_len}")
        ids, mask = pad_batch(seqs, self.vocab.pad_id, pad_to)
        t = ids.shape[1]
        x = F.add(F.embedding(p["tok"], ids), F.take_rows(p["pos"], np.arange(t)))
        bias = ((1.0 - mask) * MASK_VALUE)[:, None, None, :].astype(np.float32)
        for i in range(cfg.text_depth):
            x = _block(x, p, f"blocks.{i}", cfg.text_heads, bias)
        if cfg.text_pool == "mean_then_ln":
            pooled = F.layer_norm(F.masked_mean(x, mask), p["ln_f.g"], p["ln_f.b"])
        else:
            pooled = F.masked_mean(F.layer_norm(x, p["ln_f.g"], p["ln_f.b"]), mask)
        return F.l2_normalize(F.matmul(pooled, p["proj.w"]))


class DualEncoder:
    """Paired vision/text encoders plus the contrastive logit scale."""

    def __init__(self, cfg: EncoderConfig, vocab: Vocabulary, params: dict[str, np.ndarray]):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.vision_params = {k[len("vision."):]: Tensor(v, requires_grad=True, name=k)
                              for k, v in params.items() if k.startswith("vision.")}
        self.text_params = {k[len("text."):]: Tensor(v, requires_grad=True, name=k)
                            for k, v in params.items() if k.startswith("text.")}
        self.log_temperature = Tensor(params["log_temperature"], requires_grad=True, name="log_temperature")
        self.vision = VisionEncoder(cfg, self.vision_params)
        self.text = TextEncoder(cfg, vocab, self.text_params)

    # -- parameter access ------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for k, t in self.vision_params.items():
            yield f"vision.{k}", t
        for k, t in self.text_params.items():
            yield f"text.{k}", t
        yield "log_temperature", self.log_temperature

    def parameter_groups(self) -> dict[str, dict[str, Tensor]]:
        return {
            "vision": {f"vision.{k}": t for k, t in self.vision_params.items()},
            "text": {f"text.{k}": t for k, t in self.text_params.items()},
            "temperature": {"log_temperature": self.log_temperature},
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named_parameters()}

    def copy(self) -> "DualEncoder":
        return DualEncoder(self.cfg, self.vocab, {k: v.copy() for k, v in self.state_dict().items()})

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature.data.reshape(-1)[0]))

    # -- encoding -------------------------------------------------------------------

    def encode_images(self, images) -> Tensor:
        images = images if isinstance(images, Tensor) else Tensor(images)
        return self.vision(images)

    def encode_texts(self, seqs: Sequence[Sequence[int]], pad_to: int | None = None) -> Tensor:
        return self.text(seqs, pad_to=pad_to)

    def encode_captions(self, captions: Sequence[str]) -> Tensor:
        return self.text([self.vocab.tokenize(c) for c in captions])


def init_dual_encoder(cfg: EncoderConfig, vocab: Vocabulary, seed: int) -> DualEncoder:
    """Seeded initialisation.

    Linear maps are uniform in +-1/sqrt(fan_in) with zero bias, layer norms
    start at unit gain, token embeddings are Gaussian with
    ``cfg.token_init_std``, positions N(0, 0.02), and the log logit scale
    starts at ln(1/0.07).
    """
    cfg.validate()
    if vocab.max_len <= 0:
        raise ValueError("vocabulary max_len must be positive")
    rng = np.random.default_rng(seed)
    params = {f"vision.{k}": v for k, v in VisionEncoder.init_params(cfg, rng).items()}
    params.update({f"text.{k}": v for k, v in TextEncoder.init_params(cfg, vocab, rng).items()})
    params["log_temperature"] = np.array(math.log(1.0 / cfg.init_temperature), dtype=np.float32)
    return DualEncoder(cfg, vocab, params)


def encode_image(model: DualEncoder, image) -> Tensor:
    """Embed a single (3, H, W) image in [0, 1]; returns an (n,) unit vector."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    if image.ndim != 3:
        raise ValueError(f"expected a single (C, H, W) image, got shape {image.shape}")
    return F.reshape(model.vision(F.reshape(image, (1, *image.shape))), (model.cfg.embed_dim,))


def encode_text(model: DualEncoder, tokens: Sequence[int], pad_to: int | None = None) -> Tensor:
    """Embed a single token sequence; returns an (n,) unit vector."""
    return F.reshape(model.text([list(tokens)], pad_to=pad_to), (model.cfg.embed_dim,))
