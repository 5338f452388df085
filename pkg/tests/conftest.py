import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from concept_forge.corpus import CorpusConfig, default_vocabulary, generate_corpus  # noqa: E402
from concept_forge.encoders import EncoderConfig, init_dual_encoder  # noqa: E402

TINY = EncoderConfig(vision_width=16, vision_depth=1, vision_heads=2, text_width=16, text_depth=1, text_heads=2,
                     embed_dim=16, mlp_ratio=2)


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture
def tiny_model(vocab):
    return init_dual_encoder(TINY, vocab, seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = CorpusConfig(n_pretrain=400, test_per_base=6, test_per_novel=6, n_retrieval=20)
    return generate_corpus(cfg, seed=0)


@pytest.fixture(scope="session")
def default_corpus():
    return generate_corpus(CorpusConfig(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
