"""End-to-end knowledge transfer: invert, caption, fine-tune, persist."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus.concepts import ConceptSpec
from ..encoders.checkpoint import save_checkpoint
from ..encoders.model import DualEncoder
from ..imageio import save_png
from .finetune import FinetuneConfig, build_transfer_caption, finetune_transfer
from .inversion import InversionConfig, InvertedSet, invert_concept


class OutputExistsError(FileExistsError):
    pass


def default_negatives(base_labels: Sequence[str], concepts: Sequence[ConceptSpec], target: str) -> list[str]:
    """Base-class prompts plus the transfer captions of every other held-out concept."""
    bank = [f"a photo of a {lab}" for lab in base_labels]
    bank += [build_transfer_caption(c.name, c.description) for c in concepts if c.name != target]
    return bank


def prepare_run_dir(run_dir: str | Path, force: bool) -> Path:
    run_dir = Path(run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        if not force:
            raise OutputExistsError(f"{run_dir} is not empty; pass force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "content_hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def knowledge_transfer(model: DualEncoder, concept: ConceptSpec, inv_cfg: InversionConfig, ft_cfg: FinetuneConfig,
                       negatives: Sequence[str], run_dir: str | Path | None = None, workers: int = 1,
                       force: bool = False, inverted: InvertedSet | None = None
                       ) -> tuple[DualEncoder, InvertedSet, dict]:
    """Teach ``model`` the concept from its description alone.

    Returns the fine-tuned copy, the inverted images and the run manifest.
    When ``run_dir`` is given the manifest, PNGs, both checkpoints and the
    loss trace are written there. A precomputed ``inverted`` set skips the
    inversion.
    """
    concept.validate(model.vocab)
    inv_cfg.validate()
    ft_cfg.validate()
    out_dir = prepare_run_dir(run_dir, force) if run_dir is not None else None
    if inverted is None:
        inverted = invert_concept(model, concept.description, inv_cfg, workers=workers, concept=concept.name)
    after, trace = finetune_transfer(model, inverted, concept.name, negatives, ft_cfg)

    manifest = {
        "concept": concept.to_dict(),
        "transfer_caption": build_transfer_caption(concept.name, concept.description),
        "inversion": inv_cfg.to_dict(),
        "finetune": ft_cfg.to_dict(),
        "negatives": list(negatives),
        "sample_seeds": inverted.seeds,
        "inverted_hash": inverted.content_hash(),
        "objectives_initial": [float(v) for v in inverted.initial_objectives],
        "objectives_final": [float(v) for v in inverted.objectives],
        "loss_trace": trace,
        "workers": workers,
    }
    if out_dir is not None:
        manifest["before_ckpt_sha256"] = save_checkpoint(model, out_dir / "before.ckpt")
        manifest["after_ckpt_sha256"] = save_checkpoint(after, out_dir / "after.ckpt")
        for k, img in enumerate(inverted.images):
            save_png(img, out_dir / "inverted" / f"{k}.png")
        np.save(out_dir / "inverted" / "images.npy", inverted.images)
        lines = ["step,loss"] + [f"{i},{v:.8f}" for i, v in enumerate(trace)]
        (out_dir / "loss_trace.csv").write_text("\n".join(lines) + "\n")
    else:
        from ..encoders.checkpoint import model_hash
        manifest["before_ckpt_sha256"] = None
        manifest["after_model_hash"] = model_hash(after)
    manifest["content_hash"] = manifest_hash(manifest)
    if out_dir is not None:
        (out_dir / "run.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return after, inverted, manifest


def load_inverted(run_dir: str | Path) -> InvertedSet:
    """Rebuild the :class:`InvertedSet` stored in a run directory."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "run.json").read_text())
    images = np.load(run_dir / "inverted" / "images.npy")
    return InvertedSet(
        description=manifest["concept"]["description"],
        images=images.astype(np.float32),
        objectives=np.asarray(manifest["objectives_final"], dtype=np.float32),
        initial_objectives=np.asarray(manifest["objectives_initial"], dtype=np.float32),
        seeds=[int(s) for s in manifest["sample_seeds"]],
        concept=manifest["concept"]["name"],
    )
