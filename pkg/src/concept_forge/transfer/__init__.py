"""Concept inversion and fine-tuning on the inverted images."""

from .finetune import FinetuneConfig, NegativeOverlapError, build_transfer_caption, finetune_transfer
from .inversion import InversionConfig, InvertedSet, invert_concept
from .pipeline import OutputExistsError, default_negatives, knowledge_transfer, load_inverted

__all__ = [
    "FinetuneConfig", "InversionConfig", "InvertedSet", "NegativeOverlapError", "OutputExistsError",
    "build_transfer_caption", "default_negatives", "finetune_transfer", "invert_concept", "knowledge_transfer",
    "load_inverted",
]
