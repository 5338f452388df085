import csv
import json
import subprocess
import sys

import pytest

from concept_forge.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from concept_forge.config import RunConfig
from concept_forge.corpus import CorpusConfig
from concept_forge.corpus.pretrain import PretrainConfig
from concept_forge.encoders.checkpoint import load_checkpoint, model_hash
from concept_forge.transfer.finetune import FinetuneConfig
from concept_forge.transfer.inversion import InversionConfig

from conftest import TINY


def records(capsys) -> list[dict]:
    out = []
    for line in capsys.readouterr().out.splitlines():
        head, sep, message = line.partition(" message=")
        rec = dict(kv.split("=", 1) for kv in head.split(" ") if "=" in kv)
        if sep:
            rec["message"] = json.loads(message)
        out.append(rec)
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = RunConfig(corpus=CorpusConfig(n_pretrain=300, test_per_base=3, test_per_novel=4, n_retrieval=12),
                    encoder=TINY, pretrain=PretrainConfig(epochs=1, batch_size=32, warmup_steps=2),
                    inversion=InversionConfig(steps=4, n_samples=3), finetune=FinetuneConfig(lr=1e-4))
    cfg.save(root / "cfg.json")
    c = str(root / "cfg.json")
    assert main(["gen-corpus", "--config", c, "--out", str(root / "corpus")]) == EXIT_OK
    assert main(["pretrain", "--config", c, "--corpus", str(root / "corpus"), "--out", str(root / "m.ckpt")]) == EXIT_OK
    assert main(["transfer", "--config", c, "--checkpoint", str(root / "m.ckpt"), "--concept", "wug",
                 "--out", str(root / "run")]) == EXIT_OK
    return root


def test_help_exits_cleanly():
    proc = subprocess.run([sys.executable, "-m", "concept_forge.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pretrain" in proc.stdout


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["gen-corpus", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "c")]) == EXIT_USAGE
    assert records(capsys)[-1]["kind"] == "usage"


def test_malformed_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"corpus": {"n_pretrain": 0}}')
    assert main(["gen-corpus", "--config", str(bad), "--out", str(tmp_path / "c")]) == EXIT_USAGE
    bad.write_text("[1, 2]")
    assert main(["gen-corpus", "--config", str(bad), "--out", str(tmp_path / "c")]) == EXIT_USAGE
    bad.write_text('{"mystery": 1}')
    assert main(["gen-corpus", "--config", str(bad), "--out", str(tmp_path / "c")]) == EXIT_USAGE


def test_existing_output_needs_force(workspace, capsys):
    c = str(workspace / "cfg.json")
    assert main(["gen-corpus", "--config", c, "--out", str(workspace / "corpus")]) == EXIT_USAGE
    assert main(["gen-corpus", "--config", c, "--out", str(workspace / "corpus2")]) == EXIT_OK
    assert main(["gen-corpus", "--config", c, "--out", str(workspace / "corpus2"), "--force"]) == EXIT_OK
    a = json.loads((workspace / "corpus" / "manifest.json").read_text())
    b = json.loads((workspace / "corpus2" / "manifest.json").read_text())
    assert a == b


def test_pretrained_checkpoint_keeps_config(workspace):
    model = load_checkpoint(workspace / "m.ckpt")
    assert model.cfg == TINY


def test_zero_lr_pretrain_keeps_weights(workspace, tmp_path, capsys):
    cfg = RunConfig.load(workspace / "cfg.json")
    cfg.pretrain = PretrainConfig(lr=0.0, epochs=1, batch_size=32)
    cfg.save(tmp_path / "zero.json")
    assert main(["pretrain", "--config", str(tmp_path / "zero.json"), "--corpus", str(workspace / "corpus"),
                 "--out", str(tmp_path / "z.ckpt")]) == EXIT_OK
    rec = records(capsys)[-1]
    assert rec["start_model_hash"] == rec["model_hash"]


def test_pretrain_resume(workspace, tmp_path, capsys):
    c = str(workspace / "cfg.json")
    corpus = str(workspace / "corpus")
    assert main(["pretrain", "--config", c, "--corpus", corpus, "--out", str(tmp_path / "p.ckpt"),
                 "--stop-after-steps", "3"]) == EXIT_OK
    assert main(["pretrain", "--config", c, "--corpus", corpus, "--resume", str(tmp_path / "p.ckpt"),
                 "--out", str(tmp_path / "r.ckpt")]) == EXIT_OK
    assert model_hash(load_checkpoint(tmp_path / "r.ckpt")) == model_hash(load_checkpoint(workspace / "m.ckpt"))


def test_missing_corpus_is_usage_error(workspace, tmp_path):
    assert main(["pretrain", "--config", str(workspace / "cfg.json"), "--corpus", str(tmp_path / "none"),
                 "--out", str(tmp_path / "m.ckpt")]) == EXIT_USAGE


def test_corrupt_checkpoint_is_runtime_error(workspace, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["retrieval", "--corpus", str(workspace / "corpus"), "--checkpoint", str(bad),
                 "--out", str(tmp_path / "r.json")]) == EXIT_RUNTIME


def test_transfer_run_directory(workspace):
    run = workspace / "run"
    for name in ("before.ckpt", "after.ckpt", "run.json", "loss_trace.csv", "contact_sheet.png"):
        assert (run / name).is_file(), name
    assert len(list((run / "inverted").glob("*.png"))) == 3


def test_transfer_unknown_concept(workspace, tmp_path, capsys):
    code = main(["transfer", "--config", str(workspace / "cfg.json"), "--checkpoint", str(workspace / "m.ckpt"),
                 "--concept", "zorp", "--out", str(tmp_path / "r")])
    assert code == EXIT_USAGE
    assert "wug" in records(capsys)[-1]["message"]


def test_transfer_refuses_to_overwrite(workspace):
    assert main(["transfer", "--config", str(workspace / "cfg.json"), "--checkpoint", str(workspace / "m.ckpt"),
                 "--concept", "wug", "--out", str(workspace / "run")]) == EXIT_USAGE


def test_eval_writes_report(workspace, tmp_path, capsys):
    assert main(["eval", "--corpus", str(workspace / "corpus"), "--run", str(workspace / "run"), "--concept", "wug",
                 "--out", str(tmp_path / "ev")]) == EXIT_OK
    rec = records(capsys)[-1]
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert float(rec["target_after"]) == pytest.approx(report["target_after"], abs=1e-6)
    assert main(["eval", "--corpus", str(workspace / "corpus"), "--run", str(workspace / "run"), "--concept", "zorp",
                 "--out", str(tmp_path / "ev2")]) == EXIT_USAGE


def test_eval_needs_models(workspace, tmp_path):
    assert main(["eval", "--corpus", str(workspace / "corpus"), "--concept", "wug",
                 "--out", str(tmp_path / "ev")]) == EXIT_USAGE


def test_sweep_csv_columns(workspace, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(workspace / "cfg.json"), "--corpus", str(workspace / "corpus"),
                 "--run", str(workspace / "run"), "--lrs", "0,1e-5,1e-4", "--out", str(out)]) == EXIT_OK
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["lr"]) for r in rows] == [0.0, 1e-5, 1e-4]
    assert {"lr", "target_before", "target_after", "retention_before", "retention_after"} <= set(rows[0])
    assert rows[0]["target_after"] == rows[0]["target_before"]


def test_ablate_emits_five_variants(workspace, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(workspace / "cfg.json"), "--corpus", str(workspace / "corpus"),
                 "--run", str(workspace / "run"), "--out", str(out)]) == EXIT_OK
    rows = [r for r in records(capsys) if r.get("event") == "ablation_row"]
    assert len(rows) == 5
    assert (out / "ablation.csv").is_file() and (out / "ablation.json").is_file()


def test_retrieval_and_export(workspace, tmp_path, capsys):
    assert main(["retrieval", "--corpus", str(workspace / "corpus"), "--checkpoint", str(workspace / "m.ckpt"),
                 "--ks", "1,5", "--out", str(tmp_path / "r.json")]) == EXIT_OK
    table = json.loads((tmp_path / "r.json").read_text())
    assert set(table) >= {"image_to_text", "text_to_image"}
    assert main(["export-images", "--corpus", str(workspace / "corpus"), "--split", "novel_test", "--concept", "wug",
                 "--out", str(tmp_path / "png")]) == EXIT_OK
    assert len(list((tmp_path / "png").glob("*.png"))) == 4
    assert main(["export-images", "--corpus", str(workspace / "corpus"), "--split", "novel_test",
                 "--out", str(tmp_path / "png2")]) == EXIT_USAGE


def test_bad_workers_is_usage_error(workspace, tmp_path):
    assert main(["retrieval", "--corpus", str(workspace / "corpus"), "--checkpoint", str(workspace / "m.ckpt"),
                 "--workers", "0", "--out", str(tmp_path / "r.json")]) == EXIT_USAGE
