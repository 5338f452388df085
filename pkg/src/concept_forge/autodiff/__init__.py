"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import functional
from .image import AffineParams, AugmentConfig, affine_grid_sample, sample_affine, total_variation
from .losses import info_nce, similarity_logits
from .tensor import NonFiniteError, Tensor, backward, get_dtype, is_grad_enabled, no_grad, precision

__all__ = [
    "AffineParams",
    "AugmentConfig",
    "NonFiniteError",
    "Tensor",
    "affine_grid_sample",
    "backward",
    "functional",
    "get_dtype",
    "info_nce",
    "is_grad_enabled",
    "no_grad",
    "precision",
    "sample_affine",
    "similarity_logits",
    "total_variation",
]
