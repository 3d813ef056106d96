# Copyright (c) 2025 左岚. All rights reserved.
"""变形历史生成模块

本模块生成流变测试所需的输入信号:

- 高斯随机场（平方指数核）剪切率样本，用于训练
- 振荡剪切与恒定速率的均匀流动，用于测试
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .factor_cache import get_factor_cache
from .rheo_types import ConfigurationError, FlowKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrfConfig:
    """高斯随机场配置；length_scale 为空时取 0.1·t_end"""

    n_points: int
    t_end: float
    length_scale: Optional[float] = None
    amplitude: float = 1.0
    jitter: float = 1e-10

    @property
    def correlation_time(self) -> float:
        return self.length_scale if self.length_scale is not None else 0.1 * self.t_end

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_points)

    @property
    def dt(self) -> float:
        return self.t_end / (self.n_points - 1)

    def validate(self) -> None:
        if self.n_points < 2:
            raise ConfigurationError(f"GRF 至少需要 2 个采样点, 实际 {self.n_points}")
        if self.t_end <= 0:
            raise ConfigurationError(f"GRF 时间范围必须为正, 实际 {self.t_end}")
        if self.correlation_time <= 0:
            raise ConfigurationError(f"相关时间必须为正, 实际 {self.correlation_time}")
        if self.amplitude < 0:
            raise ConfigurationError(f"幅值不能为负, 实际 {self.amplitude}")
        if self.jitter <= 0:
            raise ConfigurationError(f"对角正则项必须为正, 实际 {self.jitter}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GrfConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        ignored = sorted(set(data) - set(known))
        if ignored:
            logger.warning(f"⚠️ GrfConfig 忽略未知字段: {ignored}")
        return cls(**known)


def squared_exponential_correlation(grid: np.ndarray, length_scale: float) -> np.ndarray:
    """单位幅值的平方指数相关矩阵 exp(−(tᵢ−tⱼ)²/(2ℓ²))"""
    lag = grid[:, None] - grid[None, :]
    return np.exp(-0.5 * (lag / length_scale) ** 2)


def _unit_factor(config: GrfConfig) -> np.ndarray:
    """单位幅值协方差加对角正则后的下三角 Cholesky 因子"""
    key = (config.n_points, config.t_end, config.correlation_time, config.jitter)

    def compute() -> np.ndarray:
        cov = squared_exponential_correlation(config.grid, config.correlation_time)
        cov[np.diag_indices_from(cov)] += config.jitter
        try:
            return cholesky(cov, lower=True)
        except LinAlgError as e:
            raise ConfigurationError(
                f"协方差矩阵在对角正则 {config.jitter:g} 下仍非正定，请增大 jitter 或减少采样点: {e}"
            ) from e

    return get_factor_cache().get_or_compute(key, compute)


def sample_grf(config: GrfConfig, seed: int) -> np.ndarray:
    """在均匀时间网格上采样零均值高斯过程

    协方差为 amplitude²·exp(−(tᵢ−tⱼ)²/(2ℓ²))，通过 L·ξ 抽样，ξ ~ N(0, I)。
    同一 (config, seed) 的结果逐位相同；amplitude 为 0 时返回全零。
    """
    config.validate()
    if config.amplitude == 0:
        return np.zeros(config.n_points)
    factor = _unit_factor(config)
    xi = np.random.default_rng(seed).standard_normal(config.n_points)
    return config.amplitude * (factor @ xi)


def oscillatory_shear(gamma0: float, omega: float, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """振荡剪切 γ = γ₀sin(ωt)，返回 (γ̇, γ)"""
    if omega <= 0:
        raise ConfigurationError(f"角频率必须为正, 实际 {omega}")
    grid = np.asarray(grid, dtype=np.float64)
    return gamma0 * omega * np.cos(omega * grid), gamma0 * np.sin(omega * grid)


def homogeneous_flow(kind: FlowKind, rate: float, grid: np.ndarray) -> np.ndarray:
    """恒定速率的均匀流动速度梯度序列 (n, 2, 2)

    平面拉伸 L = diag(rate, −rate)；简单剪切仅 L₁₂ = rate。
    """
    kind = FlowKind(kind)
    L = np.zeros((2, 2))
    if kind is FlowKind.PLANAR_EXTENSION:
        L[0, 0], L[1, 1] = rate, -rate
    else:
        L[0, 1] = rate
    return np.repeat(L[None, :, :], len(np.asarray(grid)), axis=0)


def mixed_flow(extension_rate: np.ndarray, shear_rate: np.ndarray) -> np.ndarray:
    """逐时刻组合拉伸与剪切: L = [[e, s], [0, −e]]"""
    extension_rate = np.asarray(extension_rate, dtype=np.float64)
    shear_rate = np.asarray(shear_rate, dtype=np.float64)
    if extension_rate.shape != shear_rate.shape:
        raise ConfigurationError(f"拉伸与剪切序列形状不一致: {extension_rate.shape} 与 {shear_rate.shape}")
    L = np.zeros((len(extension_rate), 2, 2))
    L[:, 0, 0] = extension_rate
    L[:, 1, 1] = -extension_rate
    L[:, 0, 1] = shear_rate
    return L


def rate_channels(L_series: np.ndarray) -> Dict[str, np.ndarray]:
    """速度梯度序列对应的变形率通道 γ̇₁₁、γ̇₂₂、γ̇₁₂（γ̇ = L + Lᵀ）"""
    return {
        "gamma_dot_xx": 2.0 * L_series[:, 0, 0],
        "gamma_dot_yy": 2.0 * L_series[:, 1, 1],
        "gamma_dot_xy": L_series[:, 0, 1] + L_series[:, 1, 0],
    }
