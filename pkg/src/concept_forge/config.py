"""Single JSON run configuration with one section per pipeline stage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus.concepts import ConceptLibrary, ConceptSpec, default_base_concepts, default_held_out_concepts
from .corpus.generate import CorpusConfig, default_vocabulary
from .corpus.pretrain import PretrainConfig
from .encoders.model import EncoderConfig
from .transfer.finetune import FinetuneConfig
from .transfer.inversion import InversionConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    sweep_lrs: list[float] = field(default_factory=lambda: [1e-5, 2e-5, 5e-5, 1e-4])
    base_concepts: list[ConceptSpec] = field(default_factory=default_base_concepts)
    held_out_concepts: list[ConceptSpec] = field(default_factory=default_held_out_concepts)
    seed: int = 0
    out_dir: str | None = None

    def library(self) -> ConceptLibrary:
        return ConceptLibrary(base=list(self.base_concepts), held_out=list(self.held_out_concepts))

    def with_seed(self, seed: int) -> "RunConfig":
        """Apply one global seed to every stage."""
        return replace(self, seed=seed, pretrain=replace(self.pretrain, seed=seed),
                       inversion=replace(self.inversion, seed=seed), finetune=replace(self.finetune, seed=seed))

    def validate(self) -> None:
        try:
            self.corpus.validate()
            self.encoder.validate()
            if self.encoder.image_size != self.corpus.image_size:
                raise ValueError("encoder and corpus image sizes differ")
            self.pretrain.validate()
            self.inversion.validate()
            self.finetune.validate()
            lrs = self.sweep_lrs
            if len(lrs) < 3 or any(b <= a for a, b in zip(lrs, lrs[1:])) or min(lrs) < 0:
                raise ValueError("sweep_lrs needs >= 3 strictly increasing non-negative values")
            vocab = default_vocabulary(self.corpus.max_len)
            for c in self.base_concepts:
                if c.split != "base":
                    raise ValueError(f"concept {c.name!r} listed as base but marked {c.split!r}")
                c.validate(vocab)
            for c in self.held_out_concepts:
                if c.split != "held_out":
                    raise ValueError(f"concept {c.name!r} listed as held-out but marked {c.split!r}")
                c.validate(vocab)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus.to_dict(),
            "encoder": self.encoder.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "inversion": self.inversion.to_dict(),
            "finetune": self.finetune.to_dict(),
            "sweep_lrs": list(self.sweep_lrs),
            "base_concepts": [c.to_dict() for c in self.base_concepts],
            "held_out_concepts": [c.to_dict() for c in self.held_out_concepts],
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"corpus", "encoder", "pretrain", "inversion", "finetune", "sweep_lrs", "base_concepts",
                 "held_out_concepts", "seed", "out_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        default = cls()
        try:
            cfg = cls(
                corpus=CorpusConfig.from_dict(d["corpus"]) if "corpus" in d else default.corpus,
                encoder=EncoderConfig.from_dict(d["encoder"]) if "encoder" in d else default.encoder,
                pretrain=PretrainConfig.from_dict(d["pretrain"]) if "pretrain" in d else default.pretrain,
                inversion=InversionConfig.from_dict(d["inversion"]) if "inversion" in d else default.inversion,
                finetune=FinetuneConfig.from_dict(d["finetune"]) if "finetune" in d else default.finetune,
                sweep_lrs=[float(v) for v in d.get("sweep_lrs", default.sweep_lrs)],
                base_concepts=[ConceptSpec.from_dict(c) for c in d["base_concepts"]]
                if "base_concepts" in d else default.base_concepts,
                held_out_concepts=[ConceptSpec.from_dict(c) for c in d["held_out_concepts"]]
                if "held_out_concepts" in d else default.held_out_concepts,
                seed=int(d.get("seed", 0)),
                out_dir=d.get("out_dir"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)
