import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from howtotag.model import ModelConfig, init_params  # noqa: E402


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return Path(str(resources.files("howtotag.data").joinpath("howsumm_fixture.jsonl")))


def jittered_params(cfg: ModelConfig, seed: int, scale: float = 0.3):
    """Parameters pushed away from the symmetric init so every path carries signal."""
    p = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    for k, v in p.tensors.items():
        p.tensors[k] = v + rng.normal(0.0, scale, v.shape)
    return p


def padded_batch(lengths, max_len, vocab_size, seed=0):
    """Random [CLS] w... [SEP] [PAD]... rows using ids >= 5 for words."""
    rng = np.random.default_rng(seed)
    ids = np.zeros((len(lengths), max_len), dtype=np.int64)
    mask = np.zeros_like(ids)
    for b, n in enumerate(lengths):
        ids[b, 0] = 2
        ids[b, 1:n - 1] = rng.integers(5, vocab_size, size=n - 2)
        ids[b, n - 1] = 3
        mask[b, :n] = 1
    return ids, mask


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(vocab_size=23, num_labels=4, max_len=8, d_model=8, n_heads=2, n_layers=2, d_ff=16)
