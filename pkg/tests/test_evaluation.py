import csv
import io
import math

import numpy as np
import pytest

from concept_forge.evaluation.report import TransferReport, default_prompts, eval_transfer
from concept_forge.evaluation.retrieval import ranks, recall_at_k, retrieval_eval
from concept_forge.evaluation.sweep import (SWEEP_COLUMNS, AblationResult, SweepResult, ablate_caption_prefix,
                                            ablate_finetune_targets, lr_sweep, spearman, write_report)
from concept_forge.evaluation.zeroshot import PromptSet, accuracy, argmax_lowest, class_embeddings, zero_shot_classify
from concept_forge.transfer.finetune import FinetuneConfig
from concept_forge.transfer.inversion import InvertedSet
from concept_forge.transfer.pipeline import default_negatives

from oracles import brute_argmax, brute_recall


def fake_inverted(rng, n=6, description="a small red circle inside a large blue square"):
    imgs = rng.uniform(0.05, 0.95, (n, 3, 32, 32)).astype(np.float32)
    return InvertedSet(description, imgs, np.zeros(n, np.float32), np.zeros(n, np.float32), list(range(n)), "wug")


# -- zero-shot -----------------------------------------------------------------------

def test_argmax_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = int(rng.integers(2, 8))
        img = rng.standard_normal((int(rng.integers(1, 6)), 5))
        cls = rng.standard_normal((c, 5))
        img /= np.linalg.norm(img, axis=1, keepdims=True)
        cls /= np.linalg.norm(cls, axis=1, keepdims=True)
        assert argmax_lowest(img @ cls.T).tolist() == brute_argmax(img, cls)


def test_exact_match_and_orthogonal_others():
    sims = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert argmax_lowest(sims).tolist() == [1]


def test_ties_go_to_lowest_index():
    assert argmax_lowest(np.full((3, 5), 0.25)).tolist() == [0, 0, 0]
    assert argmax_lowest(np.array([[0.1, 0.7, 0.7]])).tolist() == [1]


def test_predictions_invariant_to_monotone_transforms():
    rng = np.random.default_rng(1)
    sims = rng.uniform(-1, 1, (50, 7))
    base = argmax_lowest(sims)
    for f in (lambda s: 100.0 * s, lambda s: np.exp(3 * s), lambda s: s ** 3 + 2, np.arctan):
        assert np.array_equal(argmax_lowest(f(sims)), base)


def test_classify_matches_brute_force_on_model(tiny_model):
    rng = np.random.default_rng(2)
    prompts = PromptSet.from_labels(["red circle", "blue square", "green cross", "white ring", "yellow triangle"])
    images = rng.random((10, 3, 32, 32)).astype(np.float32)
    labels, sims = zero_shot_classify(tiny_model, images, prompts)
    img = tiny_model.encode_images(images).data
    cls = class_embeddings(tiny_model, prompts)
    assert labels == [prompts.labels[i] for i in brute_argmax(img, cls)]
    np.testing.assert_allclose(sims, img @ cls.T, atol=1e-6)


def test_single_image_classification(tiny_model):
    prompts = PromptSet.from_labels(["red circle", "blue square"])
    img = np.full((3, 32, 32), 0.5, np.float32)
    labels, sims = zero_shot_classify(tiny_model, img, prompts)
    assert len(labels) == 1 and sims.shape == (1, 2)


def test_multi_prompt_class_uses_renormalised_mean(tiny_model):
    prompts = PromptSet.from_mapping({"red circle": ["a photo of a red circle", "a red circle"],
                                      "wug": ["a photo of a wug"]})
    emb = class_embeddings(tiny_model, prompts)
    raw = tiny_model.encode_captions(["a photo of a red circle", "a red circle"]).data.astype(np.float64)
    m = raw.mean(axis=0)
    np.testing.assert_allclose(emb[0], m / np.linalg.norm(m), atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)


def test_prompt_set_validation():
    with pytest.raises(ValueError):
        PromptSet.from_labels([])
    with pytest.raises(ValueError):
        PromptSet.from_mapping({"a": []})
    with pytest.raises(ValueError):
        PromptSet.from_labels(["red circle", "red circle"])


def test_prompt_cache_tracks_model_snapshot(tiny_model):
    prompts = PromptSet.from_labels(["red circle", "wug"])
    first = prompts.embeddings(tiny_model).copy()
    other = tiny_model.copy()
    other.text_params["proj.w"].data *= -1
    assert np.allclose(prompts.embeddings(other), -first, atol=1e-6)
    assert np.array_equal(prompts.embeddings(tiny_model), first)


def test_accuracy_table(tiny_model):
    prompts = PromptSet.from_labels(["red circle", "blue square"])
    images = np.random.default_rng(3).random((6, 3, 32, 32)).astype(np.float32)
    preds, _ = zero_shot_classify(tiny_model, images, prompts)
    truth = ["red circle"] * 3 + ["blue square"] * 3
    acc, table = accuracy(tiny_model, images, truth, prompts)
    assert acc == sum(p == t for p, t in zip(preds, truth)) / 6
    assert sum(v[1] for v in table.values()) == 6
    with pytest.raises(ValueError):
        accuracy(tiny_model, images[:0], [], prompts)


# -- retrieval ----------------------------------------------------------------------

def test_recall_matches_brute_force_sort():
    rng = np.random.default_rng(4)
    for trial in range(100):
        n = 50 if trial == 0 else int(rng.integers(10, 30))
        # coarse values force plenty of ties
        sims = np.round(rng.standard_normal((n, n)), 1)
        table = recall_at_k(sims, (1, 5, 10))
        for k in (1, 5, 10):
            assert table["image_to_text"][k] == brute_recall(sims, k)
            assert table["text_to_image"][k] == brute_recall(sims.T, k)


def test_singleton_recall():
    table = recall_at_k(np.array([[0.3]]), ks=(1,))
    assert table["image_to_text"][1] == table["text_to_image"][1] == 1.0


def test_degenerate_similarity_gives_k_over_n():
    n = 20
    table = recall_at_k(np.zeros((n, n)), (1, 5, 10))
    for k in (1, 5, 10):
        assert table["image_to_text"][k] == k / n
        assert table["text_to_image"][k] == k / n


def test_recall_monotone_and_full_at_n():
    rng = np.random.default_rng(5)
    sims = rng.standard_normal((15, 15))
    table = recall_at_k(sims, (1, 3, 5, 10, 15))
    for side in ("image_to_text", "text_to_image"):
        vals = [table[side][k] for k in (1, 3, 5, 10, 15)]
        assert vals == sorted(vals) and vals[-1] == 1.0


def test_ranks_stable_tie_break():
    sims = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    assert ranks(sims).tolist() == [0, 1, 0]


def test_recall_rejects_too_few_pairs():
    with pytest.raises(ValueError):
        recall_at_k(np.eye(4), (1, 5))
    with pytest.raises(ValueError):
        recall_at_k(np.ones((2, 3)), (1,))


def test_retrieval_eval_on_model(tiny_model, small_corpus):
    imgs = small_corpus.images("retrieval")
    caps = [s.caption for s in small_corpus.retrieval]
    table = retrieval_eval(tiny_model, imgs, caps, (1, 5, 10))
    assert table["n_pairs"] == len(caps)
    assert 0.0 <= table["image_to_text"][1] <= table["image_to_text"][10] <= 1.0
    with pytest.raises(ValueError):
        retrieval_eval(tiny_model, imgs[:3], caps[:3], (1, 5))


# -- transfer reports -----------------------------------------------------------------

def test_identical_models_have_zero_deltas(tiny_model, small_corpus):
    rep = eval_transfer(tiny_model, tiny_model.copy(), small_corpus, "wug")
    assert rep.target_gain == 0.0 and rep.retention_drop == 0.0
    assert rep.per_class_before == rep.per_class_after
    assert rep.fingerprint["before"] == rep.fingerprint["after"]
    for v in (rep.target_before, rep.target_after, rep.retention_before, rep.retention_after):
        assert 0.0 <= v <= 1.0


def test_report_counts_and_json(tiny_model, small_corpus):
    rep = eval_transfer(tiny_model, tiny_model, small_corpus, "wug")
    n_novel, n_base = len(small_corpus.novel_test["wug"]), len(small_corpus.base_test)
    assert rep.target_counts["before"][1] == n_novel
    assert rep.retention_counts["before"][1] == n_base
    assert rep.target_before == rep.target_counts["before"][0] / n_novel
    clone = TransferReport(**__import__("json").loads(rep.to_json()))
    assert clone.content_hash() == rep.content_hash()


def test_report_is_deterministic(tiny_model, small_corpus):
    a = eval_transfer(tiny_model, tiny_model, small_corpus, "wug")
    b = eval_transfer(tiny_model.copy(), tiny_model.copy(), small_corpus, "wug")
    assert a.content_hash() == b.content_hash()


def test_default_prompts_add_novel_class(small_corpus):
    p = default_prompts(small_corpus, "wug")
    assert p.labels == [*small_corpus.base_labels, "wug"]
    assert p.prompts["wug"] == ["a photo of a wug"]


def test_eval_transfer_errors(tiny_model, small_corpus):
    with pytest.raises(ValueError):
        eval_transfer(tiny_model, tiny_model, small_corpus, "dax")
    with pytest.raises(ValueError):
        eval_transfer(tiny_model, tiny_model, small_corpus, "wug", prompts=PromptSet.from_labels(["red circle"]))


# -- sweeps and ablations --------------------------------------------------------------

def test_spearman():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert math.isnan(spearman([1, 2, 3], [5, 5, 5]))


def test_spearman_matches_rank_difference_formula():
    # no ties: rho = 1 - 6 sum(d^2) / (n (n^2 - 1)), exactly representable here
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(3, 9))
        y = rng.permutation(n)
        d2 = float(np.sum((np.arange(n) - y) ** 2))
        assert spearman(list(range(n)), (y * 0.01 + 0.5).tolist()) == round(1 - 6 * d2 / (n * (n * n - 1)), 12)
    assert spearman([1e-5, 2e-5, 5e-5, 1e-4], [0.938, 0.942, 0.927, 0.888]) == -0.8


def test_sweep_rejects_unsorted_lrs():
    with pytest.raises(ValueError):
        SweepResult([1e-5, 1e-5, 2e-5], [], [], "")


def test_lr_sweep_rows_share_baseline_and_differ_only_in_lr(tiny_model, small_corpus):
    rng = np.random.default_rng(6)
    inv = fake_inverted(rng)
    neg = default_negatives(small_corpus.base_labels, small_corpus.concepts.held_out, "wug")
    res = lr_sweep(tiny_model, inv, "wug", [0.0, 1e-4, 1e-3], FinetuneConfig(), small_corpus, neg)
    befores = {(r.target_before, r.retention_before) for r in res.reports}
    assert len(befores) == 1
    zero = res.reports[0]
    assert zero.target_after == zero.target_before and zero.retention_after == zero.retention_before
    for a, b in zip(res.configs, res.configs[1:]):
        diff = {k for k in a.to_dict() if a.to_dict()[k] != b.to_dict()[k]}
        assert diff == {"lr"}
    rows = list(csv.DictReader(io.StringIO(res.to_csv())))
    assert tuple(rows[0]) == SWEEP_COLUMNS and len(rows) == 3
    assert res.inverted_hash == inv.content_hash()


def test_lr_sweep_needs_three_rates(tiny_model, small_corpus):
    inv = fake_inverted(np.random.default_rng(0))
    with pytest.raises(ValueError):
        lr_sweep(tiny_model, inv, "wug", [1e-5, 2e-5], FinetuneConfig(), small_corpus, ["a photo of a red circle"])


def test_ablations_share_controls_and_enumerate_variants(tiny_model, small_corpus, tmp_path):
    inv = fake_inverted(np.random.default_rng(7))
    neg = default_negatives(small_corpus.base_labels, small_corpus.concepts.held_out, "wug")
    tgt = ablate_finetune_targets(tiny_model, inv, "wug", 1e-4, FinetuneConfig(), small_corpus, neg)
    pre = ablate_caption_prefix(tiny_model, inv, "wug", 1e-4, FinetuneConfig(), small_corpus, neg)
    both = tgt.merged(pre)
    assert list(both.variants) == ["vision_only", "text_only", "both", "with_name_prefix", "without_name_prefix"]
    assert {c.lr for c in both.configs.values()} == {1e-4}
    assert {c.seed for c in both.configs.values()} == {0}
    assert tgt.inverted_hash == pre.inverted_hash == inv.content_hash()
    assert len({(r.target_before, r.retention_before) for r in both.variants.values()}) == 1
    csv_path, json_path = write_report(both, tmp_path, "ablation")
    assert csv_path.read_text().count("\n") == 6 and json_path.exists()
    with pytest.raises(ValueError):
        both.merged(AblationResult({}, {}, "other"))
