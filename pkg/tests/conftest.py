# Copyright (c) 2025 左岚. All rights reserved.
"""测试公共夹具"""

import numpy as np
import pytest

from rheoformer.constitutive import TevpParams
from rheoformer.flow1d import ChannelConfig, build_flow_dataset
from rheoformer.generators import RheometricConfig, build_rheometric_dataset
from rheoformer.model import ModelConfig
from rheoformer.optim import TrainConfig
from rheoformer.rheo_types import ConstitutiveKind, Protocol

# 小网络：测试只关心正确性，不关心精度
TINY_MODEL = {
    "d_model": 8,
    "n_heads": 2,
    "n_encoder_layers": 1,
    "propagator_width": 16,
    "propagator_depth": 2,
    "fourier_dim": 4,
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def short_channel():
    """短时长、粗网格的通道流配置（1000 步，26 个快照）"""
    return ChannelConfig(ny=15, t_end=0.5)


@pytest.fixture(scope="session")
def flow_dataset(short_channel):
    return build_flow_dataset(short_channel, np.linspace(-2.0, -0.5, 6))


@pytest.fixture(scope="session")
def tevp_params():
    return TevpParams(G=1.0, sigma_y=1.0, eta_s=0.1, eta_p=1.0, k_plus=0.2, k_minus=0.5)


@pytest.fixture(scope="session")
def small_rheometric_config():
    return RheometricConfig(n_points=41, t_end=4.0)


@pytest.fixture(scope="session")
def tevp_dataset(tevp_params, small_rheometric_config):
    return build_rheometric_dataset(ConstitutiveKind.TEVP, Protocol.GRF, 4, 11, tevp_params, small_rheometric_config)


@pytest.fixture
def tiny_model_config():
    def make(in_channels: int, out_channels: int, coord_dim: int = 1, seed: int = 0) -> ModelConfig:
        return ModelConfig(in_channels=in_channels, out_channels=out_channels, coord_dim=coord_dim,
                           seed=seed, **TINY_MODEL)
    return make


@pytest.fixture
def quick_train_config():
    return TrainConfig(lr=3e-3, batch_size=2, epochs=2, seed=5, condition_steps=10)
