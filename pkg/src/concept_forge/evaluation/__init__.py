"""Zero-shot classification, retrieval, transfer reports and sweeps."""

from .report import TransferReport, default_prompts, eval_transfer
from .retrieval import recall_at_k, retrieval_eval
from .sweep import AblationResult, SweepResult, ablate_caption_prefix, ablate_finetune_targets, lr_sweep, spearman, \
    write_report
from .zeroshot import PromptSet, accuracy, zero_shot_classify

__all__ = [
    "AblationResult", "PromptSet", "SweepResult", "TransferReport", "ablate_caption_prefix", "ablate_finetune_targets",
    "accuracy", "default_prompts", "eval_transfer", "lr_sweep", "recall_at_k", "retrieval_eval", "spearman",
    "write_report", "zero_shot_classify",
]
