"""Command-line entry point: ``concept-forge <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Progress is printed as ``key=value`` records, one per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .corpus.generate import CorpusSplit, LeakageError, generate_corpus
from .corpus.pretrain import PretrainState, pretrain
from .encoders.checkpoint import CheckpointError, load_checkpoint, model_hash, save_checkpoint
from .encoders.model import init_dual_encoder
from .evaluation.report import default_prompts, eval_transfer
from .evaluation.retrieval import retrieval_eval
from .evaluation.sweep import ablate_caption_prefix, ablate_finetune_targets, lr_sweep, write_report
from .evaluation.zeroshot import PromptSet, accuracy
from .imageio import contact_sheet, save_png
from .optim import Adam
from .transfer.pipeline import OutputExistsError, default_negatives, knowledge_transfer, load_inverted

OUT_ENV = "CONCEPT_FORGE_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def emit(**fields) -> None:
    """Print one machine-parsable ``key=value`` record."""
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    print(" ".join(parts), flush=True)


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "concept_forge_out"))


def _output(path: str | None, default_name: str) -> Path:
    return Path(path) if path else _out_root() / default_name


def _guard(path: Path, force: bool) -> None:
    if path.exists() and (path.is_file() or any(path.iterdir())) and not force:
        raise UsageError(f"{path} already exists; pass --force to overwrite")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    else:
        cfg = cfg.with_seed(cfg.seed)
    cfg.validate()
    return cfg


def _load_corpus(path: str) -> CorpusSplit:
    p = Path(path)
    if not (p / "manifest.json").is_file() and not p.is_file():
        raise UsageError(f"no corpus manifest at {p}")
    return CorpusSplit.load(p)


def _base_accuracy(model, corpus: CorpusSplit) -> float:
    prompts = PromptSet.from_labels(corpus.base_labels)
    acc, _ = accuracy(model, corpus.images("base_test"), [s.label for s in corpus.base_test], prompts)
    return acc


# -- commands -------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _load_config(args)
    out = _output(args.out, "corpus")
    _guard(out, args.force)
    split = generate_corpus(cfg.corpus, cfg.seed, cfg.library())
    path = split.save(out)
    if args.png:
        for i, s in enumerate(split.pretrain[: args.png_limit]):
            save_png(split.images("pretrain")[i], out / "png" / "pretrain" / f"{i:05d}.png")
    emit(event="gen-corpus", manifest=path, pretrain=len(split.pretrain), base_test=len(split.base_test),
         content_hash=split.content_hash())
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    out = _output(args.out, "pretrained.ckpt")
    _guard(out, args.force)
    optimizer = state = None
    if args.resume:
        model, optim_state, extra = load_checkpoint(args.resume, with_optimizer=True)
        params = dict(model.named_parameters())
        optimizer = Adam(params, lr=cfg.pretrain.lr, weight_decay=cfg.pretrain.weight_decay)
        if optim_state is None:
            raise UsageError(f"{args.resume} carries no optimizer state to resume from")
        optimizer.load_state_dict(optim_state)
        state = PretrainState(step=int(extra.get("step", 0)), losses=list(extra.get("losses", [])),
                              reserved_grad_norm=float(extra.get("reserved_grad_norm", 0.0)))
    elif args.init:
        model = load_checkpoint(args.init)
    else:
        model = init_dual_encoder(cfg.encoder, corpus.vocab, cfg.seed)
    start_hash = model_hash(model)
    model, optimizer, state = pretrain(model, corpus, cfg.pretrain, optimizer, state,
                                       stop_after_steps=args.stop_after_steps)
    extra = {"step": state.step, "losses": state.losses, "reserved_grad_norm": state.reserved_grad_norm,
             "pretrain": cfg.pretrain.to_dict(), "corpus_hash": corpus.content_hash()}
    save_checkpoint(model, out, optim_state=optimizer.state_dict(), extra=extra)
    acc = _base_accuracy(model, corpus)
    emit(event="pretrain", checkpoint=out, steps=state.step, start_model_hash=start_hash,
         model_hash=model_hash(model), reserved_grad_norm=state.reserved_grad_norm, base_zero_shot_accuracy=acc)
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = _load_config(args)
    lib = cfg.library()
    try:
        concept = lib.get(args.concept)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    model = load_checkpoint(args.checkpoint)
    ft = cfg.finetune if args.lr is None else replace(cfg.finetune, lr=args.lr)
    out = _output(args.out, f"runs/{concept.name}")
    negatives = default_negatives([c.name for c in lib.base], lib.held_out, concept.name)
    try:
        _, inverted, manifest = knowledge_transfer(model, concept, cfg.inversion, ft, negatives, out,
                                                   workers=args.workers, force=args.force)
    except OutputExistsError as exc:
        raise UsageError(str(exc)) from exc
    contact_sheet(list(inverted.images), out / "contact_sheet.png")
    emit(event="transfer", concept=concept.name, run_dir=out, images=len(inverted),
         objective_before=float(np.mean(inverted.initial_objectives)),
         objective_after=float(np.mean(inverted.objectives)), content_hash=manifest["content_hash"])
    return EXIT_OK


def _run_models(args):
    if args.run:
        run = Path(args.run)
        return load_checkpoint(run / "before.ckpt"), load_checkpoint(run / "after.ckpt")
    if not (args.before and args.after):
        raise UsageError("give --run or both --before and --after")
    return load_checkpoint(args.before), load_checkpoint(args.after)


def cmd_eval(args) -> int:
    _load_config(args)
    corpus = _load_corpus(args.corpus)
    before, after = _run_models(args)
    if args.concept not in corpus.novel_test:
        raise UsageError(f"unknown concept {args.concept!r}; available: {', '.join(corpus.novel_test)}")
    report = eval_transfer(before, after, corpus, args.concept, default_prompts(corpus, args.concept))
    out = _output(args.out, f"reports/eval_{args.concept}")
    _guard(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(
        "concept,target_before,target_after,retention_before,retention_after\n"
        f"{report.concept},{report.target_before:.6f},{report.target_after:.6f},"
        f"{report.retention_before:.6f},{report.retention_after:.6f}\n")
    emit(event="eval", concept=args.concept, target_before=report.target_before, target_after=report.target_after,
         retention_before=report.retention_before, retention_after=report.retention_after,
         report_hash=report.content_hash())
    return EXIT_OK


def _run_inputs(args, cfg: RunConfig):
    run = Path(args.run)
    if not (run / "run.json").is_file():
        raise UsageError(f"{run} is not a transfer run directory")
    manifest = json.loads((run / "run.json").read_text())
    pretrained = load_checkpoint(run / "before.ckpt")
    inverted = load_inverted(run)
    name = manifest["concept"]["name"]
    return pretrained, inverted, name, manifest["negatives"]


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    pretrained, inverted, name, negatives = _run_inputs(args, cfg)
    lrs = [float(v) for v in args.lrs.split(",")] if args.lrs else cfg.sweep_lrs
    out = _output(args.out, f"reports/sweep_{name}")
    _guard(out, args.force)
    result = lr_sweep(pretrained, inverted, name, lrs, cfg.finetune, corpus, negatives, workers=args.workers)
    write_report(result, out, "sweep")
    for row in result.rows():
        emit(event="sweep_row", **row)
    emit(event="sweep", concept=name, spearman_target=result.spearman_target(),
         spearman_retention=result.spearman_retention())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    pretrained, inverted, name, negatives = _run_inputs(args, cfg)
    lr = args.lr if args.lr is not None else cfg.finetune.lr
    out = _output(args.out, f"reports/ablate_{name}")
    _guard(out, args.force)
    results = []
    if args.which in ("targets", "all"):
        results.append(ablate_finetune_targets(pretrained, inverted, name, lr, cfg.finetune, corpus, negatives,
                                               workers=args.workers))
    if args.which in ("prefix", "all"):
        results.append(ablate_caption_prefix(pretrained, inverted, name, lr, cfg.finetune, corpus, negatives,
                                             workers=args.workers))
    result = results[0] if len(results) == 1 else results[0].merged(results[1])
    write_report(result, out, "ablation")
    for row in result.rows():
        emit(event="ablation_row", **row)
    return EXIT_OK


def cmd_retrieval(args) -> int:
    _load_config(args)
    corpus = _load_corpus(args.corpus)
    model = load_checkpoint(args.checkpoint)
    ks = [int(k) for k in args.ks.split(",")]
    table = retrieval_eval(model, corpus.images("retrieval"), [s.caption for s in corpus.retrieval], ks)
    out = _output(args.out, "reports/retrieval.json")
    _guard(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, indent=2, sort_keys=True))
    for direction in ("image_to_text", "text_to_image"):
        emit(event="retrieval", direction=direction, **{f"r@{k}": v for k, v in table[direction].items()})
    return EXIT_OK


def cmd_export_images(args) -> int:
    corpus = _load_corpus(args.corpus)
    out = _output(args.out, "png")
    _guard(out, args.force)
    if args.split == "novel_test":
        if args.concept not in corpus.novel_test:
            raise UsageError(f"--concept must be one of {', '.join(corpus.novel_test)}")
        images = corpus.images("novel_test", args.concept)
    else:
        images = corpus.images(args.split)
    n = min(len(images), args.limit)
    for i in range(n):
        save_png(images[i], out / f"{i:05d}.png")
    emit(event="export-images", split=args.split, count=n, out=out)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="concept-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log progress from library modules")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run config JSON (defaults when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed everywhere")
        p.add_argument("--out", help=f"output path (default under ${OUT_ENV})")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--workers", type=int, default=1)
        p.set_defaults(fn=fn)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate and audit the synthetic corpus")
    p.add_argument("--png", action="store_true", help="also export pretraining images as PNG")
    p.add_argument("--png-limit", type=int, default=100)

    p = add("pretrain", cmd_pretrain, "contrastive pretraining")
    p.add_argument("--corpus", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--resume", help="checkpoint with optimizer state to continue from")
    g.add_argument("--init", help="start from these weights with a fresh optimizer")
    p.add_argument("--stop-after-steps", type=int, default=None)

    p = add("transfer", cmd_transfer, "invert a concept and fine-tune on it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--lr", type=float, default=None)

    p = add("eval", cmd_eval, "zero-shot target/retention report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--run")
    p.add_argument("--before")
    p.add_argument("--after")

    p = add("sweep", cmd_sweep, "fine-tuning learning-rate sweep")
    p.add_argument("--corpus", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--lrs", help="comma-separated learning rates")

    p = add("ablate", cmd_ablate, "freezing and caption-prefix ablations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--which", choices=("targets", "prefix", "all"), default="all")

    p = add("retrieval", cmd_retrieval, "image-text retrieval recall@k")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ks", default="1,5,10")

    p = add("export-images", cmd_export_images, "write corpus images as PNG")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("pretrain", "base_test", "novel_test", "retrieval"), default="base_test")
    p.add_argument("--concept")
    p.add_argument("--limit", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s %(message)s")
    try:
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        emit(event="error", kind="usage", message=json.dumps(str(exc)))
        return EXIT_USAGE
    except (LeakageError, CheckpointError, FloatingPointError, RuntimeError, ValueError, OSError) as exc:
        emit(event="error", kind="runtime", message=json.dumps(str(exc)))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
