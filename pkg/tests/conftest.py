import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from earlyrumor.lm import Backbone, ExpertBank, ModelDims, Vocabulary  # noqa: E402

TINY = ModelDims(d=6, enc_layers=1, dec_layers=1, ffn=8, rank=2, max_len=10)


@pytest.fixture
def tiny_vocab():
    return Vocabulary([f"w{i}" for i in range(10)])


def randomize_bank(bank, rng, scale=0.3):
    """Non-zero up projections so gradients reach every adapter entry."""
    bank.up.data = rng.normal(0.0, scale, bank.up.shape)
    bank.human.up.data = rng.normal(0.0, scale, bank.human.up.shape)
    return bank


@pytest.fixture
def tiny_model(tiny_vocab):
    bb = Backbone(len(tiny_vocab), TINY, seed=3)
    bb.freeze()
    bank = randomize_bank(ExpertBank(3, TINY.d, TINY.rank, seed=4), np.random.default_rng(5))
    return bb, bank
