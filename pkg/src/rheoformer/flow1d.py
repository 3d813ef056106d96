# Copyright (c) 2025 左岚. All rights reserved.
"""平面通道启动流求解模块

压力梯度驱动的 Oldroyd-B 流体在平板通道中由静止启动，求解一维瞬态问题:

    ρ ∂u/∂t = −dp/dx + η_s ∂²u/∂y² + ∂τ_xy/∂y
    ∂τ_xy/∂t = (η_p ∂u/∂y − τ_xy)/τ₁
    ∂τ_xx/∂t = −τ_xx/τ₁ + 2 τ_xy ∂u/∂y          (τ_yy ≡ 0)

τ 为聚合物附加应力。空间二阶中心差分，时间显式欧拉。
网格节点 y_j = j·h（j = 0..ny+1，h = H/(ny+1)），两端为无滑移壁面；
壁面处的 ∂u/∂y 用二阶单侧差分，因此离散稳态恰为 Poiseuille 抛物线。

溶剂/聚合物拆分与 Oldroyd-B 参数的对应关系:
    η₀ = η_s + η_p = G₀τ₁,   η_s = G₀τ₂,   η_p = G₀(τ₁ − τ₂)
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .constitutive import OldroydBParams
from .dataset_io import KIND_FLOW, FieldDataset, FieldSequence
from .rheo_types import ConfigurationError, DivergenceError

logger = logging.getLogger(__name__)

CHANNELS = ("u_x", "sigma_xy", "sigma_xx")
UNITS = {"u_x": "m/s", "sigma_xy": "Pa", "sigma_xx": "Pa"}
DEFAULT_SNAPSHOTS = 26


@dataclass(frozen=True)
class ChannelConfig:
    """通道流配置"""

    H: float = 1.0              # 通道宽度 (m)
    ny: int = 31                # 内部网格点数
    rho: float = 1.0            # 密度 (kg/m³)
    eta_s: float = 0.05         # 溶剂黏度 (Pa·s)
    eta_p: float = 0.45         # 聚合物黏度 (Pa·s)
    tau1: float = 0.1           # 松弛时间 (s)
    dpdx: float = -1.0          # 压力梯度 (Pa/m)，负值驱动 +x 方向流动
    dt: float = 5e-4            # 时间步长 (s)
    t_end: float = 5.0          # 模拟时长 (s)

    @property
    def h(self) -> float:
        return self.H / (self.ny + 1)

    @property
    def eta0(self) -> float:
        return self.eta_s + self.eta_p

    @property
    def max_stable_dt(self) -> float:
        """显式扩散稳定上限 ρh²/(2η₀)"""
        return self.rho * self.h ** 2 / (2.0 * self.eta0)

    @property
    def elasticity_number(self) -> float:
        """弹性数 E = τ₁η₀/(ρH²)"""
        return self.tau1 * self.eta0 / (self.rho * self.H ** 2)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.H, self.ny + 2)

    def validate(self) -> None:
        positives = {"H": self.H, "rho": self.rho, "eta_s": self.eta_s, "eta_p": self.eta_p,
                     "tau1": self.tau1, "dt": self.dt, "t_end": self.t_end}
        bad = {k: v for k, v in positives.items() if not v > 0}
        if bad:
            raise ConfigurationError(f"通道参数必须为正: {bad}")
        if self.ny < 8:
            raise ConfigurationError(f"ny 至少为 8, 实际 {self.ny}")
        if self.dt > self.max_stable_dt:
            raise ConfigurationError(
                f"时间步 dt={self.dt:g} 超过稳定上限 ρh²/(2η₀)={self.max_stable_dt:g}，请减小 dt 或 ny"
            )
        if self.dt > self.tau1:
            raise ConfigurationError(f"时间步 dt={self.dt:g} 大于松弛时间 τ₁={self.tau1:g}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ChannelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        ignored = sorted(set(data) - set(known))
        if ignored:
            logger.warning(f"⚠️ ChannelConfig 忽略未知字段: {ignored}")
        return cls(**known)


def channel_oldroydb_params(config: ChannelConfig) -> OldroydBParams:
    """溶剂/聚合物拆分对应的 Oldroyd-B 参数 (G₀, τ₁, τ₂)"""
    g0 = config.eta0 / config.tau1
    return OldroydBParams(tau1=config.tau1, tau2=config.eta_s / g0, G0=g0)


def polymer_stress_rhs(config: ChannelConfig, tau_xy, tau_xx, shear_rate) -> Tuple[Any, Any]:
    """单向剪切下聚合物应力的演化率 (dτ_xy/dt, dτ_xx/dt)，逐元素作用于标量或数组"""
    dtau_xy = (config.eta_p * shear_rate - tau_xy) / config.tau1
    dtau_xx = -tau_xx / config.tau1 + 2.0 * tau_xy * shear_rate
    return dtau_xy, dtau_xx


def poiseuille_profile(config: ChannelConfig) -> np.ndarray:
    """解析稳态速度 u(y) = (−dp/dx)/(2η₀)·y·(H−y)"""
    y = config.y
    return -config.dpdx / (2.0 * config.eta0) * y * (config.H - y)


def velocity_gradient(u: np.ndarray, h: float) -> np.ndarray:
    """全部节点上的 ∂u/∂y：内部中心差分，壁面二阶单侧差分"""
    return np.gradient(np.asarray(u, dtype=np.float64), h, edge_order=2)


def momentum_rhs(config: ChannelConfig, u: np.ndarray, tau_xy: np.ndarray) -> np.ndarray:
    """内部节点上的 ρ∂u/∂t"""
    h = config.h
    viscous = config.eta_s * (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
    elastic = (tau_xy[2:] - tau_xy[:-2]) / (2.0 * h)
    return -config.dpdx + viscous + elastic


def momentum_residual(config: ChannelConfig, u: np.ndarray, tau_xy: np.ndarray) -> float:
    """离散动量方程残差的最大范数，稳态时应接近零"""
    return float(np.max(np.abs(momentum_rhs(config, u, tau_xy))))


def _snapshot_stride(config: ChannelConfig, snapshots: int) -> Tuple[int, int]:
    if snapshots < 2:
        raise ConfigurationError(f"快照数至少为 2, 实际 {snapshots}")
    n_total = int(round(config.t_end / config.dt))
    if n_total % (snapshots - 1) != 0:
        raise ConfigurationError(
            f"总步数 {n_total} 不能被快照间隔数 {snapshots - 1} 整除，请调整 t_end 或 dt"
        )
    return n_total, n_total // (snapshots - 1)


def solve_startup_channel(config: ChannelConfig, snapshots: int = DEFAULT_SNAPSHOTS) -> FieldSequence:
    """求解启动流并在均匀时刻记录快照（含 t = 0 的静止状态）

    Returns:
        通道为 (u_x, sigma_xy, sigma_xx)、坐标为壁面在内的 y 网格的 FieldSequence
    """
    config.validate()
    n_total, stride = _snapshot_stride(config, snapshots)
    n_nodes = config.ny + 2
    u = np.zeros(n_nodes)
    tau_xy = np.zeros(n_nodes)
    tau_xx = np.zeros(n_nodes)
    frames = [np.stack([u, tau_xy, tau_xx], axis=1)]
    scale = config.dt / config.rho

    for step in range(1, n_total + 1):
        shear = velocity_gradient(u, config.h)
        du_dt = momentum_rhs(config, u, tau_xy)
        dtau_xy, dtau_xx = polymer_stress_rhs(config, tau_xy, tau_xx, shear)
        u[1:-1] += scale * du_dt
        tau_xy = tau_xy + config.dt * dtau_xy
        tau_xx = tau_xx + config.dt * dtau_xx
        if step % stride == 0:
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(tau_xy)) and np.all(np.isfinite(tau_xx))):
                raise DivergenceError("通道流求解出现非有限值", t_index=step)
            frames.append(np.stack([u, tau_xy, tau_xx], axis=1))

    metadata = {
        "dpdx": config.dpdx,
        "tau1": config.tau1,
        "elasticity_number": config.elasticity_number,
    }
    logger.debug(f"通道流求解完成: dpdx={config.dpdx:g}, {n_total} 步, {len(frames)} 个快照")
    return FieldSequence(config.y[:, None], CHANNELS, np.stack(frames), stride * config.dt, metadata)


def weissenberg_number(config: ChannelConfig, u_max: float) -> float:
    """Wi = τ₁·U_max/H"""
    return config.tau1 * u_max / config.H


def generate_flow_dataset(
    base: ChannelConfig,
    dpdx_values: Sequence[float],
    snapshots: int = DEFAULT_SNAPSHOTS,
) -> List[FieldSequence]:
    """对每个压力梯度求解一次，记录 dpdx、U_max、Wi 与弹性数"""
    sequences = []
    for dpdx in dpdx_values:
        config = replace(base, dpdx=float(dpdx))
        seq = solve_startup_channel(config, snapshots)
        u_max = float(np.max(np.abs(seq.channel("u_x"))))
        seq.metadata.update(u_max=u_max, Wi=weissenberg_number(config, u_max))
        sequences.append(seq)
    if sequences:
        wi = [s.metadata["Wi"] for s in sequences]
        logger.info(f"🌊 生成 {len(sequences)} 条通道流序列, Wi ∈ [{min(wi):.4g}, {max(wi):.4g}]")
    return sequences


def build_flow_dataset(base: ChannelConfig, dpdx_values: Sequence[float],
                       snapshots: int = DEFAULT_SNAPSHOTS) -> FieldDataset:
    """生成通道流数据并打包为数据集"""
    sequences = generate_flow_dataset(base, dpdx_values, snapshots)
    attrs = {"kind": KIND_FLOW, "generator": "flow1d", "channel_config": base.to_dict()}
    return FieldDataset(sequences, dict(UNITS), attrs)
