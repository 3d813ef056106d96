# Copyright (c) 2025 左岚. All rights reserved.
"""优化器与归一化模块

- TrainConfig: 训练超参数（均为本项目自选）
- adam_step: 带偏差修正与全局范数裁剪的 Adam 更新，纯函数
- Normalizer: 逐通道零均值单位方差，坐标缩放到 [0, 1]
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .layers import global_grad_norm
from .rheo_types import ConfigurationError

logger = logging.getLogger(__name__)

_STD_FLOOR = 1e-12


@dataclass
class TrainConfig:
    """训练配置"""

    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 500
    clip_norm: float = 1.0
    seed: int = 0
    condition_steps: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    normalization: str = "per_channel"      # 逐通道统计量，只在训练集上估计
    loss_reduction: str = "mean"            # 对通道和推进步取平均

    def validate(self) -> None:
        if self.lr <= 0 or self.clip_norm <= 0 or self.adam_eps <= 0:
            raise ConfigurationError(f"lr、clip_norm、adam_eps 必须为正: {self}")
        if self.batch_size < 1 or self.epochs < 0 or self.condition_steps < 1:
            raise ConfigurationError(f"batch_size/condition_steps 必须为正且 epochs 不能为负: {self}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"beta1、beta2 需在 [0, 1) 内: {self.beta1}, {self.beta2}")
        if not (0 < self.train_fraction <= 1 and 0 <= self.val_fraction < 1
                and self.train_fraction + self.val_fraction <= 1):
            raise ConfigurationError(f"划分比例非法: train={self.train_fraction}, val={self.val_fraction}")
        if self.normalization != "per_channel":
            raise ConfigurationError(f"不支持的归一化策略: {self.normalization}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"不支持的损失规约: {self.loss_reduction}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        ignored = sorted(set(data) - set(known))
        if ignored:
            logger.warning(f"⚠️ TrainConfig 忽略未知字段: {ignored}")
        return cls(**known)


# ========== Adam ==========
@dataclass
class AdamState:
    """Adam 的一阶/二阶矩与计数器"""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0

    def copy(self) -> "AdamState":
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.skipped)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    norm = global_grad_norm([], list(grads.values()))
    if norm <= max_norm or norm == 0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(
    weights: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """一次 Adam 更新，返回新的权重与状态，不修改输入

    梯度含非有限值时跳过本步，只把 skipped 加一。
    """
    if set(weights) != set(grads):
        raise ConfigurationError(f"权重与梯度名称不一致: {sorted(set(weights) ^ set(grads))}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        skipped = state.copy()
        skipped.skipped += 1
        logger.warning(f"⚠️ 梯度含非有限值，跳过第 {state.step + 1} 步 (累计跳过 {skipped.skipped})")
        return {k: w.copy() for k, w in weights.items()}, skipped

    grads, _ = clip_by_global_norm(grads, config.clip_norm)
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step
    new_weights, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = grads[name]
        m = b1 * state.m.get(name, np.zeros_like(w)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(w)) + (1.0 - b2) * g * g
        new_weights[name] = w - config.lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_weights, AdamState(step=step, m=new_m, v=new_v, skipped=state.skipped)


# ========== 归一化 ==========
@dataclass
class Normalizer:
    """逐通道统计量与坐标范围"""

    channels: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    coord_min: np.ndarray
    coord_span: np.ndarray

    @classmethod
    def fit(cls, fields: np.ndarray, coords: np.ndarray, channels) -> "Normalizer":
        """fields 形状 (..., n_channels)，在除通道外的所有轴上统计"""
        flat = np.asarray(fields, dtype=np.float64).reshape(-1, len(channels))
        std = flat.std(axis=0)
        std = np.where(std < _STD_FLOOR, 1.0, std)
        coords = np.asarray(coords, dtype=np.float64)
        span = coords.max(axis=0) - coords.min(axis=0)
        span = np.where(span <= 0, 1.0, span)
        return cls(tuple(channels), flat.mean(axis=0), std, coords.min(axis=0), span)

    def _select(self, names) -> Tuple[np.ndarray, np.ndarray]:
        if names is None:
            return self.mean, self.std
        idx = [self.channels.index(n) for n in names]
        return self.mean[idx], self.std[idx]

    def normalize(self, values: np.ndarray, names=None) -> np.ndarray:
        mean, std = self._select(names)
        return (values - mean) / std

    def denormalize(self, values: np.ndarray, names=None) -> np.ndarray:
        mean, std = self._select(names)
        return values * std + mean

    def scale_coords(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.coord_min) / self.coord_span

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"mean": self.mean, "std": self.std, "coord_min": self.coord_min, "coord_span": self.coord_span}

    @classmethod
    def from_arrays(cls, channels, arrays: Dict[str, np.ndarray]) -> "Normalizer":
        return cls(tuple(channels), arrays["mean"], arrays["std"], arrays["coord_min"], arrays["coord_span"])


def weights_of(params: Dict[str, Any]) -> Dict[str, np.ndarray]:
    """参数张量字典 → 数组副本"""
    return {name: p.data.copy() for name, p in params.items()}


def grads_of(params: Dict[str, Any]) -> Dict[str, np.ndarray]:
    """未参与前向的参数梯度按零处理"""
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}


def assign_weights(params: Dict[str, Any], weights: Dict[str, np.ndarray], names: Optional[list] = None) -> None:
    for name in names or weights:
        params[name].data = weights[name]
