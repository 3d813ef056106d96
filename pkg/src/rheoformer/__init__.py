# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 非牛顿流体神经算子代理模型

本包提供自动微分张量核心、线性注意力神经算子、本构积分器、
随机加载信号、一维槽道流求解器，以及训练、评估和命令行工具。
"""

from .config import RheoSettings, get_settings
from .model import ModelConfig, RheOFormer
from .optim import TrainConfig
from .rheo_types import RheoFormerError

__all__ = ["ModelConfig", "RheOFormer", "RheoFormerError", "RheoSettings", "TrainConfig", "get_settings"]
