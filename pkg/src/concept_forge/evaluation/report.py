"""Before/after measurement of one transfer run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from ..corpus.generate import CorpusSplit
from ..encoders.checkpoint import model_hash
from ..encoders.model import DualEncoder
from .zeroshot import PromptSet, accuracy


@dataclass
class TransferReport:
    concept: str
    target_before: float
    target_after: float
    retention_before: float
    retention_after: float
    target_counts: dict = field(default_factory=dict)  # {"before": [correct, total], "after": [...]}
    retention_counts: dict = field(default_factory=dict)
    per_class_before: dict = field(default_factory=dict)
    per_class_after: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)

    @property
    def target_gain(self) -> float:
        return self.target_after - self.target_before

    @property
    def retention_drop(self) -> float:
        return self.retention_before - self.retention_after

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def default_prompts(corpus: CorpusSplit, concept: str) -> PromptSet:
    """Base classes plus the novel class, all with the same template."""
    return PromptSet.from_labels([*corpus.base_labels, concept])


def _measure(model: DualEncoder, corpus: CorpusSplit, concept: str, prompts: PromptSet):
    novel = corpus.novel_test[concept]
    t_acc, t_table = accuracy(model, corpus.images("novel_test", concept), [s.label for s in novel], prompts)
    r_acc, r_table = accuracy(model, corpus.images("base_test"), [s.label for s in corpus.base_test], prompts)
    return t_acc, t_table, r_acc, r_table


def eval_transfer(before: DualEncoder, after: DualEncoder, corpus: CorpusSplit, concept: str,
                  prompts: PromptSet | None = None, before_measurement=None) -> TransferReport:
    """Target accuracy on the concept's test images and retention on the base
    test set, both with one classifier over base classes plus the concept."""
    if before.cfg.embed_dim != after.cfg.embed_dim or before.vocab.to_dict() != after.vocab.to_dict():
        raise ValueError("before/after models must share vocabulary and embedding size")
    if concept not in corpus.novel_test or not corpus.novel_test[concept]:
        raise ValueError(f"no test images for concept {concept!r}")
    if not corpus.base_test:
        raise ValueError("empty base test set")
    prompts = prompts or default_prompts(corpus, concept)
    if concept not in prompts.labels:
        raise ValueError(f"prompt set has no class {concept!r}")
    b = before_measurement or _measure(before, corpus, concept, prompts)
    a = _measure(after, corpus, concept, prompts)

    def counts(table):
        return [sum(r[0] for r in table.values()), sum(r[1] for r in table.values())]

    return TransferReport(
        concept=concept,
        target_before=b[0], target_after=a[0], retention_before=b[2], retention_after=a[2],
        target_counts={"before": counts(b[1]), "after": counts(a[1])},
        retention_counts={"before": counts(b[3]), "after": counts(a[3])},
        per_class_before={k: v[0] / v[1] for k, v in sorted(b[3].items())},
        per_class_after={k: v[0] / v[1] for k, v in sorted(a[3].items())},
        fingerprint={"before": model_hash(before), "after": model_hash(after),
                     "corpus": corpus.content_hash(),
                     "prompts": hashlib.sha256(json.dumps(prompts.prompts, sort_keys=True).encode()).hexdigest()},
    )
