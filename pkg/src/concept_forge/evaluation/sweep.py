"""Learning-rate sweeps and fine-tuning ablations over one inverted set."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from ..corpus.generate import CorpusSplit
from ..encoders.model import DualEncoder
from ..transfer.finetune import FinetuneConfig, finetune_transfer
from ..transfer.inversion import InvertedSet
from .report import TransferReport, _measure, default_prompts, eval_transfer
from .zeroshot import PromptSet

SWEEP_COLUMNS = ("lr", "target_before", "target_after", "retention_before", "retention_after")
TARGET_VARIANTS = {
    "vision_only": {"freeze_vision": False, "freeze_text": True},
    "text_only": {"freeze_vision": True, "freeze_text": False},
    "both": {"freeze_vision": False, "freeze_text": False},
}
PREFIX_VARIANTS = {
    "with_name_prefix": {"use_name_prefix": True},
    "without_name_prefix": {"use_name_prefix": False},
}


@dataclass
class SweepResult:
    lrs: list[float]
    reports: list[TransferReport]
    configs: list[FinetuneConfig]
    inverted_hash: str

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.lrs, self.lrs[1:])):
            raise ValueError("sweep learning rates must be strictly increasing")

    def spearman_target(self) -> float:
        return spearman(self.lrs, [r.target_after for r in self.reports])

    def spearman_retention(self) -> float:
        return spearman(self.lrs, [r.retention_after for r in self.reports])

    def rows(self) -> list[dict]:
        return [{"lr": lr, "target_before": r.target_before, "target_after": r.target_after,
                 "retention_before": r.retention_before, "retention_after": r.retention_after}
                for lr, r in zip(self.lrs, self.reports)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: repr(v) if k == "lr" else f"{v:.6f}" for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"lrs": self.lrs, "inverted_hash": self.inverted_hash,
                "spearman_target": _nan_to_none(self.spearman_target()),
                "spearman_retention": _nan_to_none(self.spearman_retention()),
                "configs": [c.to_dict() for c in self.configs], "reports": [r.to_dict() for r in self.reports]}


@dataclass
class AblationResult:
    variants: dict[str, TransferReport]
    configs: dict[str, FinetuneConfig]
    inverted_hash: str

    def rows(self) -> list[dict]:
        return [{"variant": v, "target_before": r.target_before, "target_after": r.target_after,
                 "target_gain": r.target_gain, "retention_before": r.retention_before,
                 "retention_after": r.retention_after}
                for v, r in self.variants.items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ("variant", "target_before", "target_after", "target_gain", "retention_before", "retention_after")
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: v if k == "variant" else f"{v:.6f}" for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"inverted_hash": self.inverted_hash,
                "configs": {k: c.to_dict() for k, c in self.configs.items()},
                "variants": {k: r.to_dict() for k, r in self.variants.items()}}

    def merged(self, other: "AblationResult") -> "AblationResult":
        if other.inverted_hash != self.inverted_hash:
            raise ValueError("ablations ran on different inverted sets")
        return AblationResult({**self.variants, **other.variants}, {**self.configs, **other.configs},
                              self.inverted_hash)


def _nan_to_none(x: float):
    return None if x != x else x


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (average ranks for ties); NaN if either side is constant.

    Rounded to 12 decimals: rank correlations of short sequences are simple
    fractions, and Pearson-on-ranks leaves float noise around them.
    """
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return float("nan")
    return round(float(spearmanr(x, y).statistic), 12)


def _run_row(args) -> TransferReport:
    pretrained, inverted, name, negatives, cfg, corpus, prompts, before_m = args
    after, _ = finetune_transfer(pretrained, inverted, name, negatives, cfg)
    return eval_transfer(pretrained, after, corpus, name, prompts, before_measurement=before_m)


def _run_many(pretrained, inverted, name, negatives, configs, corpus, prompts, workers) -> list[TransferReport]:
    before_m = _measure(pretrained, corpus, name, prompts)
    jobs = [(pretrained, inverted, name, list(negatives), c, corpus, prompts, before_m) for c in configs]
    if workers <= 1:
        return [_run_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_row, jobs))


def lr_sweep(pretrained: DualEncoder, inverted: InvertedSet, name: str, lrs: Sequence[float],
             ft_base: FinetuneConfig, corpus: CorpusSplit, negatives: Sequence[str],
             prompts: PromptSet | None = None, workers: int = 1) -> SweepResult:
    """Fine-tune once per learning rate from the same checkpoint and inverted set."""
    lrs = [float(v) for v in lrs]
    if len(lrs) < 3:
        raise ValueError("an lr sweep needs at least 3 learning rates")
    prompts = prompts or default_prompts(corpus, name)
    configs = [replace(ft_base, lr=lr) for lr in lrs]
    reports = _run_many(pretrained, inverted, name, negatives, configs, corpus, prompts, workers)
    return SweepResult(lrs, reports, configs, inverted.content_hash())


def _ablate(variants: dict, pretrained, inverted, name, lr, ft_base, corpus, negatives, prompts, workers):
    prompts = prompts or default_prompts(corpus, name)
    configs = {v: replace(ft_base, lr=lr, **overrides) for v, overrides in variants.items()}
    reports = _run_many(pretrained, inverted, name, negatives, list(configs.values()), corpus, prompts, workers)
    return AblationResult(dict(zip(configs, reports)), configs, inverted.content_hash())


def ablate_finetune_targets(pretrained: DualEncoder, inverted: InvertedSet, name: str, lr: float,
                            ft_base: FinetuneConfig, corpus: CorpusSplit, negatives: Sequence[str],
                            prompts: PromptSet | None = None, workers: int = 1) -> AblationResult:
    """Fine-tune the vision encoder only, the text encoder only, or both."""
    return _ablate(TARGET_VARIANTS, pretrained, inverted, name, lr, ft_base, corpus, negatives, prompts, workers)


def ablate_caption_prefix(pretrained: DualEncoder, inverted: InvertedSet, name: str, lr: float,
                          ft_base: FinetuneConfig, corpus: CorpusSplit, negatives: Sequence[str],
                          prompts: PromptSet | None = None, workers: int = 1) -> AblationResult:
    """Caption ``"a <name> is <description>"`` versus the bare description."""
    return _ablate(PREFIX_VARIANTS, pretrained, inverted, name, lr, ft_base, corpus, negatives, prompts, workers)


def write_report(obj, directory: str | Path, stem: str) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json`` for a sweep or ablation result."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"
    csv_path.write_text(obj.to_csv())
    json_path.write_text(json.dumps(obj.to_dict(), sort_keys=True, indent=2))
    return csv_path, json_path
