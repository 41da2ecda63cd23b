import numpy as np
import pytest

from convrec.config import HyperParams
from convrec.data import SplitDataset, build_sequences, chronological_split
from convrec.model import init_params
from convrec.synthetic import SyntheticSpec, generate_interactions


@pytest.fixture(scope="session")
def tiny_hp() -> HyperParams:
    return HyperParams(
        latent_dim=6,
        order=4,
        num_targets=2,
        heights=(1, 2, 4),
        num_h_filters=2,
        num_v_filters=2,
        dropout=0.0,
        l2=0.0,
        lr=1e-3,
        num_negatives=3,
    )


@pytest.fixture(scope="session")
def tiny_split() -> SplitDataset:
    """Small planted-pattern dataset: 80 users, 120 items, length 20."""
    rows = generate_interactions(
        SyntheticSpec(num_users=80, num_items=120, seq_len=20, num_genres=10,
                      num_clusters=5, genres_per_cluster=2, num_special_pairs=8, seed=97)
    )
    return chronological_split(build_sequences(rows, 1))


@pytest.fixture
def tiny_params(tiny_hp, tiny_split):
    rng = np.random.default_rng(123)
    params = init_params(tiny_hp, tiny_split.user_count, tiny_split.item_count, rng)
    # random biases so bias terms participate in oracle comparisons
    params.fc_b[:] = rng.normal(scale=0.2, size=params.fc_b.shape)
    params.out_b[1:] = rng.normal(scale=0.2, size=tiny_split.item_count)
    return params
