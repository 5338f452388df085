"""Synthetic shape scenes, captions, concepts and the pretraining loop."""

from .concepts import BLICK, RESERVED_NAMES, WUG, ConceptLibrary, ConceptSpec, ObjectPattern, RenderRule
from .generate import CorpusConfig, CorpusSplit, LeakageError, audit_exclusion, default_vocabulary, generate_corpus
from .scenes import ObjectSpec, SceneError, SceneSpec, caption_scene, parse_caption, render_scene

__all__ = [
    "BLICK", "RESERVED_NAMES", "WUG", "ConceptLibrary", "ConceptSpec", "CorpusConfig", "CorpusSplit",
    "LeakageError", "ObjectPattern", "ObjectSpec", "RenderRule", "SceneError", "SceneSpec", "audit_exclusion",
    "caption_scene", "default_vocabulary", "generate_corpus", "parse_caption", "render_scene",
]
