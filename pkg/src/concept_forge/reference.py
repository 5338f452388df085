"""Pinned settings of the reference run shipped with the package."""

from __future__ import annotations

import json
from importlib import resources


def load_reference() -> dict:
    """Seed, sweep grid and tuned fine-tuning lr used by the acceptance suite.

    The tuned lr is chosen once by a fixed rule (largest sweep lr whose
    retention drop stays within the allowed budget) and then frozen here.
    """
    text = resources.files("concept_forge").joinpath("data/reference.json").read_text()
    ref = json.loads(text)
    missing = {"seed", "concept", "sweep_lrs", "tuned_lr"} - set(ref)
    if missing:
        raise ValueError(f"reference settings missing {sorted(missing)}")
    return ref
