"""Synthesize images of a concept by inverting the vision encoder.

Each sample starts from seeded noise logits ``z``; the image is
``sigmoid(z)`` so pixels stay strictly inside (0, 1). Adam ascends

    cos(f_V(A(x)), f_T(description)) - alpha * TV(x)

where ``A`` is a random affine augmentation redrawn every step.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import AugmentConfig, Tensor, affine_grid_sample, backward, no_grad, sample_affine, total_variation
from ..autodiff import functional as F
from ..encoders.model import DualEncoder
from ..optim import Adam, cosine_lr

log = logging.getLogger(__name__)

# float32 sigmoid rounds to exactly 1.0 past ~17; +-15 keeps pixels strictly in (0, 1)
LOGIT_BOUND = 15.0


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 5000
    alpha: float = 0.005
    lr: float = 0.1
    schedule: str = "cosine"  # or "constant"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    n_samples: int = 10
    init_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError("inversion steps must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.lr < 0:
            raise ValueError("inversion lr must be >= 0")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        self.augment.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["scale_range"] = list(self.augment.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InversionConfig":
        d = dict(d)
        aug = dict(d.pop("augment", {}))
        if "scale_range" in aug:
            aug["scale_range"] = tuple(aug["scale_range"])
        return cls(augment=AugmentConfig(**aug), **d)

    def sample_seeds(self) -> list[int]:
        return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(self.seed).spawn(self.n_samples)]


@dataclass
class InvertedSet:
    """Synthesized images for one description."""

    description: str
    images: np.ndarray  # (n, 3, H, W) float32 in (0, 1)
    objectives: np.ndarray  # final cos - alpha*TV per image, without augmentation
    initial_objectives: np.ndarray
    seeds: list[int]
    concept: str | None = None

    def __len__(self) -> int:
        return len(self.images)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.description.encode())
        h.update(np.ascontiguousarray(self.images, dtype="<f4").tobytes())
        h.update(np.asarray(self.seeds, dtype="<i8").tobytes())
        return h.hexdigest()


def initial_logits(seed: int, shape: tuple[int, ...], std: float) -> np.ndarray:
    z = std * np.random.default_rng(seed).standard_normal(shape)
    return np.clip(z, -LOGIT_BOUND, LOGIT_BOUND).astype(np.float32)


def _text_target(model: DualEncoder, description: str) -> np.ndarray:
    with no_grad():
        return model.encode_captions([description]).data[0]


def inversion_objective(model: DualEncoder, images: np.ndarray, target: np.ndarray, alpha: float) -> np.ndarray:
    """Un-augmented objective per image (no gradient)."""
    with no_grad():
        x = Tensor(images)
        cos = model.encode_images(x).data @ target
        tv = total_variation(x).data
    return (cos - alpha * tv).astype(np.float32)


def _invert_chunk(model: DualEncoder, target: np.ndarray, cfg: InversionConfig, seeds: list[int]) -> np.ndarray:
    s = model.cfg.image_size
    shape = (model.cfg.channels, s, s)
    logits = Tensor(np.stack([initial_logits(sd, shape, cfg.init_std) for sd in seeds]), requires_grad=True)
    aug_rngs = [np.random.default_rng([sd, 1]) for sd in seeds]
    opt = Adam({"logits": logits}, lr=cfg.lr)
    frozen = list(model.named_parameters())
    saved = [(t, t.requires_grad) for _, t in frozen]
    for t, _ in saved:
        t.requires_grad = False  # keeps the encoder off the tape
    try:
        tgt = Tensor(target)
        for step in range(cfg.steps):
            x = F.sigmoid(logits)
            params = [sample_affine(r, cfg.augment) for r in aug_rngs]
            xa = x if all(p.is_identity for p in params) else affine_grid_sample(x, params)
            emb = model.encode_images(xa)
            cos = F.matmul(emb, tgt)
            objective = F.sub(cos, F.scale(total_variation(x), cfg.alpha))
            loss = F.scale(F.sum(objective), -1.0)
            grads = backward(loss)
            lr = cosine_lr(cfg.lr, step, cfg.steps) if cfg.schedule == "cosine" else cfg.lr
            opt.step(grads, lr=lr)
            np.clip(logits.data, -LOGIT_BOUND, LOGIT_BOUND, out=logits.data)
            logits.grad = None
    finally:
        for t, flag in saved:
            t.requires_grad = flag
    with no_grad():
        return F.sigmoid(logits).data.copy()


def _worker(args):
    model, target, cfg, seeds = args
    return _invert_chunk(model, target, cfg, seeds)


def invert_concept(model: DualEncoder, description: str, cfg: InversionConfig, workers: int = 1,
                   concept: str | None = None) -> InvertedSet:
    """Run the inversion for ``cfg.n_samples`` seeds.

    With ``workers > 1`` the samples are split into contiguous chunks solved
    in separate processes. Samples never interact, so each image depends only
    on its own seed; results are reproducible for a fixed worker count.
    """
    cfg.validate()
    model.vocab.tokenize(description)  # raises on out-of-vocabulary words
    target = _text_target(model, description)
    seeds = cfg.sample_seeds()
    s = model.cfg.image_size
    init = np.stack([initial_logits(sd, (model.cfg.channels, s, s), cfg.init_std) for sd in seeds])
    with no_grad():
        init_images = F.sigmoid(Tensor(init)).data
    initial = inversion_objective(model, init_images, target, cfg.alpha)

    if workers <= 1 or cfg.n_samples == 1:
        images = _invert_chunk(model, target, cfg, seeds)
    else:
        chunks = [list(c) for c in np.array_split(np.asarray(seeds, dtype=np.int64), min(workers, len(seeds)))]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_worker, [(model, target, cfg, [int(v) for v in c]) for c in chunks]))
        images = np.concatenate(parts)
    if not np.isfinite(images).all():
        raise FloatingPointError("inversion produced non-finite pixels")
    final = inversion_objective(model, images, target, cfg.alpha)
    log.info("inversion description=%r steps=%d objective_before=%.4f objective_after=%.4f", description,
             cfg.steps, float(initial.mean()), float(final.mean()))
    return InvertedSet(description, images.astype(np.float32), final, initial, seeds, concept)
