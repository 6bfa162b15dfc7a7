import dataclasses

import numpy as np
import pytest

from nfbeam.config import ModelConfig, preset


@pytest.fixture(scope="session")
def desk_cfg():
    return preset("desk")


@pytest.fixture(scope="session")
def paper_cfg():
    return preset("paper")


@pytest.fixture(scope="session")
def pure_los_cfg(desk_cfg):
    return dataclasses.replace(desk_cfg, num_clusters=0)


@pytest.fixture(scope="session")
def tiny_cfg(desk_cfg):
    """Smallest config that exercises every code path; for gradient checks."""
    return dataclasses.replace(
        desk_cfg,
        num_subcarriers=4,
        num_bs_antennas=8,
        widebeam_count=4,
        num_rf_chains=2,
        widebeam_group_factor=2,
        context_frames=3,
        distance_samples=2,
    )


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(
        init_channels=3,
        block_channels=4,
        pool_hw=2,
        d_emb=8,
        n_heads=2,
        n_layers=1,
        ffn_hidden=16,
        dropout=0.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
