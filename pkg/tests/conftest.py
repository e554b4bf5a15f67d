from pathlib import Path

import numpy as np
import pytest

from structcoh.graphio import EmbeddingTables, load_corpus
from structcoh.trainer import ModelParams, TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"
REPO_ROOT = Path(__file__).parent.parent
SYNTHETIC_DIR = REPO_ROOT / "data" / "synthetic"


def small_config(**overrides) -> TrainConfig:
    """A tiny model config that keeps test models fast to build and check."""
    base = dict(
        d=8, d_tok=6, d_pos=4, d_type=4, layers=2,
        token_table_rows=32, max_positions=16, relation_table_rows=8,
        dropout=0.0, batch_size=2, epochs=2, min_freq=2, seed=11,
        validation_every=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def cfg() -> TrainConfig:
    return small_config()


@pytest.fixture
def params(cfg) -> ModelParams:
    return ModelParams(cfg)


@pytest.fixture
def tables(cfg) -> EmbeddingTables:
    return EmbeddingTables.init(
        cfg.token_table_rows, cfg.max_positions, cfg.d_tok, cfg.d_pos, cfg.d_type,
        np.random.default_rng(cfg.seed),
    )


@pytest.fixture
def small_corpus(params, cfg):
    return load_corpus(FIXTURES / "corpus_small", params.tables,
                       cfg.relation_table_rows, cfg.min_freq)
