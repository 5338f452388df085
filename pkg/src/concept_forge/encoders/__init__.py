"""Dual encoder, tokenizer and checkpoint format."""

from .checkpoint import ChecksumError, CheckpointError, VersionMismatchError, load_checkpoint, save_checkpoint
from .model import DualEncoder, EncoderConfig, encode_image, encode_text, init_dual_encoder
from .vocab import TokenizeError, Vocabulary, tokenize

__all__ = [
    "ChecksumError", "CheckpointError", "DualEncoder", "EncoderConfig", "TokenizeError", "VersionMismatchError",
    "Vocabulary", "encode_image", "encode_text", "init_dual_encoder", "load_checkpoint", "save_checkpoint", "tokenize",
]
