import numpy as np
import pytest

from hpm.ablation import synthetic_dataset
from hpm.data import SynthConfig, synth_generate, to_amazon_lines, write_lines
from hpm.rng import substream

SMALL = SynthConfig(n_users=150, n_categories=4, items_per_category=30, min_length=8, max_length=14)


@pytest.fixture(scope="session")
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def small_dataset():
    return synthetic_dataset(SMALL, 0)


@pytest.fixture(scope="session")
def amazon_fixture(tmp_path_factory):
    """Amazon-format review and metadata files for 240 synthetic users."""
    cfg = SynthConfig(n_users=240, n_categories=6, items_per_category=25, min_length=6, max_length=14)
    sd = synth_generate(cfg, substream(11, "fixture"))
    from hpm.data import Dataset
    ds = Dataset(sd.catalog, sd.sequences, sd.graph, sd.user_ids)
    reviews, meta = to_amazon_lines(ds, sd.metadata)
    root = tmp_path_factory.mktemp("amazon")
    return write_lines(root / "reviews.jsonl", reviews), write_lines(root / "meta.jsonl", meta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
