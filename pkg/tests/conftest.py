import numpy as np
import pytest

from lgmrec.config import RngStreams, TrainConfig
from lgmrec.model import ModelParams
from lgmrec.synthetic import SynthConfig, generate_synthetic_with_labels
from lgmrec.trainer import TrainContext


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset():
    """5 users, 8 items, 2 modalities; small enough for finite differences."""
    cfg = SynthConfig(
        num_users=5,
        num_items=8,
        num_latent_attributes=2,
        feature_dims={"visual": 6, "textual": 6},
        interactions_per_user=4,
        seed=3,
    )
    dataset, labels = generate_synthetic_with_labels(cfg)
    return dataset


@pytest.fixture
def tiny_config():
    return TrainConfig(
        embedding_dim=4,
        batch_size=6,
        collab_layers=1,
        modal_layers=1,
        hyper_layers=1,
        num_hyperedges=2,
        hcl_pool="full",
        reg_weight=1e-3,
        contrast_weight=0.1,
        hyper_dropout=0.3,
        seed=7,
    ).validate()


@pytest.fixture
def tiny_setup(tiny_dataset, tiny_config):
    streams = RngStreams.from_seed(tiny_config.seed)
    params = ModelParams.initialize(
        tiny_dataset.num_users,
        tiny_dataset.num_items,
        {m: f.shape[1] for m, f in tiny_dataset.modal_features.items()},
        tiny_config,
        streams.init,
    )
    ctx = TrainContext.from_dataset(tiny_dataset)
    return tiny_dataset, tiny_config, params, ctx
