# Copyright (c) 2025 左岚. All rights reserved.
"""流变数据集生成模块

把 signals 的加载历史送入 constitutive 的积分器，得到 TimeSeriesSample 数据集。

- TEVP: 标量剪切，输入 gamma_dot，输出 sigma_xy（只接受剪切类协议）
- Giesekus / Oldroyd-B: 张量形式，输入 gamma_dot_xx/yy/xy，输出 sigma_xx/yy/xy/yx

每个样本额外保存应变通道 gamma（γ̇ 的累积梯形积分），供应力-应变曲线使用，不参与训练。
积分在内部细步长上进行，再按输出网格取样。
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .constitutive import (
    GiesekusParams,
    OldroydBParams,
    SymTensor2,
    TevpParams,
    TevpState,
    integrate_giesekus,
    integrate_oldroydb,
    integrate_tevp,
    substeps_for,
    tevp_fastest_time,
    tevp_steady_state,
)
from .dataset_io import FieldDataset, TimeSeriesSample
from .rheo_types import ConfigurationError, ConstitutiveKind, FlowKind, Protocol
from .signals import GrfConfig, homogeneous_flow, mixed_flow, oscillatory_shear, rate_channels, sample_grf

logger = logging.getLogger(__name__)

MaterialParams = Union[TevpParams, GiesekusParams, OldroydBParams]

SCALAR_INPUTS = ["gamma_dot"]
SCALAR_OUTPUTS = ["sigma_xy"]
TENSOR_INPUTS = ["gamma_dot_xx", "gamma_dot_yy", "gamma_dot_xy"]
TENSOR_OUTPUTS = ["sigma_xx", "sigma_yy", "sigma_xy", "sigma_yx"]
UNITS = {"gamma_dot": "1/s", "gamma_dot_xx": "1/s", "gamma_dot_yy": "1/s", "gamma_dot_xy": "1/s",
         "sigma_xx": "Pa", "sigma_yy": "Pa", "sigma_xy": "Pa", "sigma_yx": "Pa", "gamma": "-"}


@dataclass
class RheometricConfig:
    """流变数据生成配置（取值范围为本项目自选）"""

    n_points: int = 101
    t_end: float = 10.0
    grf_amplitude: float = 1.0
    grf_length_scale: Optional[float] = None
    extension_amplitude_ratio: float = 0.5          # 张量 GRF 中拉伸分量相对幅值
    shear_rate_range: Tuple[float, float] = (0.1, 5.0)
    extension_weissenberg_range: Tuple[float, float] = (0.05, 0.4)   # τ₁ε̇ 的范围，需 < 0.5
    oscillation_amplitude_range: Tuple[float, float] = (0.5, 5.0)    # γ₀
    oscillation_frequency_range: Tuple[float, float] = (0.5, 2.0)    # ω (rad/s)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_points)

    @property
    def dt(self) -> float:
        return self.t_end / (self.n_points - 1)

    def grf(self, amplitude: Optional[float] = None) -> GrfConfig:
        return GrfConfig(self.n_points, self.t_end, self.grf_length_scale,
                         self.grf_amplitude if amplitude is None else amplitude)


def _log_uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _strain(rate: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return cumulative_trapezoid(rate, grid, initial=0.0)


# ========== TEVP ==========
def _tevp_rate(protocol: Protocol, cfg: RheometricConfig, rng: np.random.Generator) -> Tuple[np.ndarray, Dict[str, Any]]:
    grid = cfg.grid
    if protocol is Protocol.GRF:
        grf_seed = int(rng.integers(2 ** 32))
        return sample_grf(cfg.grf(), grf_seed), {"grf_seed": grf_seed}
    if protocol is Protocol.OSCILLATORY:
        gamma0 = _log_uniform(rng, cfg.oscillation_amplitude_range)
        omega = float(rng.uniform(*cfg.oscillation_frequency_range))
        rate, _ = oscillatory_shear(gamma0, omega, grid)
        return rate, {"gamma0": gamma0, "omega": omega}
    if protocol is Protocol.SHEAR:
        rate = _log_uniform(rng, cfg.shear_rate_range)
        return np.full(len(grid), rate), {"rate": rate}
    raise ConfigurationError(f"TEVP 模型只支持剪切类协议, 不支持 {protocol.value}")


def tevp_sample(params: TevpParams, protocol: Protocol, cfg: RheometricConfig,
                rng: np.random.Generator) -> TimeSeriesSample:
    """单个 TEVP 样本；初始状态取 γ̇(0) 下的稳态"""
    rate, meta = _tevp_rate(protocol, cfg, rng)
    lam0, sigma0 = tevp_steady_state(params, float(rate[0]))
    substeps = substeps_for(cfg.dt, tevp_fastest_time(params, float(np.max(np.abs(rate)))))
    series = integrate_tevp(params, rate, cfg.dt, TevpState(sigma0, lam0), substeps=substeps)
    meta.update(protocol=protocol.value, lambda_final=float(series.lam[-1]))
    return TimeSeriesSample(
        times=cfg.grid,
        inputs={"gamma_dot": rate},
        outputs={"sigma_xy": series.sigma12, "gamma": _strain(rate, cfg.grid)},
        metadata=meta,
    )


# ========== Giesekus / Oldroyd-B ==========
def _tensor_flow(protocol: Protocol, tau1: float, cfg: RheometricConfig,
                 rng: np.random.Generator) -> Tuple[np.ndarray, Dict[str, Any]]:
    grid = cfg.grid
    if protocol is Protocol.GRF:
        seeds = [int(s) for s in rng.integers(2 ** 32, size=2)]
        e = sample_grf(cfg.grf(cfg.grf_amplitude * cfg.extension_amplitude_ratio), seeds[0])
        s = sample_grf(cfg.grf(), seeds[1])
        return mixed_flow(e, s), {"grf_seeds": seeds}
    if protocol is Protocol.OSCILLATORY:
        gamma0 = _log_uniform(rng, cfg.oscillation_amplitude_range)
        omega = float(rng.uniform(*cfg.oscillation_frequency_range))
        rate, _ = oscillatory_shear(gamma0, omega, grid)
        return mixed_flow(np.zeros_like(rate), rate), {"gamma0": gamma0, "omega": omega}
    if protocol is Protocol.SHEAR:
        rate = _log_uniform(rng, cfg.shear_rate_range)
        return homogeneous_flow(FlowKind.SIMPLE_SHEAR, rate, grid), {"rate": rate}
    wi = _log_uniform(rng, cfg.extension_weissenberg_range)
    rate = wi / tau1
    return homogeneous_flow(FlowKind.PLANAR_EXTENSION, rate, grid), {"rate": rate, "Wi": wi}


def tensor_sample(kind: ConstitutiveKind, params: Union[GiesekusParams, OldroydBParams], protocol: Protocol,
                  cfg: RheometricConfig, rng: np.random.Generator) -> TimeSeriesSample:
    """单个张量样本；从静止（零应力）开始"""
    L_series, meta = _tensor_flow(protocol, params.tau1, cfg, rng)
    max_rate = float(np.max(np.abs(L_series)))
    fastest = min(params.tau1, 1.0 / max_rate) if max_rate > 0 else params.tau1
    substeps = substeps_for(cfg.dt, fastest)
    integrate = integrate_giesekus if kind is ConstitutiveKind.GIESEKUS else integrate_oldroydb
    series = integrate(params, L_series, cfg.dt, SymTensor2.zero(), substeps=substeps)
    rates = rate_channels(L_series)
    outputs = series.channels()
    outputs["gamma"] = _strain(rates["gamma_dot_xy"], cfg.grid)
    meta.update(protocol=protocol.value)
    return TimeSeriesSample(times=cfg.grid, inputs=rates, outputs=outputs, metadata=meta)


# ========== 数据集 ==========
def build_rheometric_dataset(
    kind: ConstitutiveKind,
    protocol: Protocol,
    n_samples: int,
    seed: int,
    params: MaterialParams,
    cfg: Optional[RheometricConfig] = None,
) -> FieldDataset:
    """生成 n_samples 个流变样本；同一 (参数, 协议, seed) 结果逐位相同"""
    kind, protocol = ConstitutiveKind(kind), Protocol(protocol)
    cfg = cfg or RheometricConfig()
    if n_samples < 1:
        raise ConfigurationError(f"样本数必须为正, 实际 {n_samples}")
    params.validate()
    children = np.random.SeedSequence(seed).spawn(n_samples)
    samples: List[TimeSeriesSample] = []
    for index, child in enumerate(children):
        rng = np.random.default_rng(child)
        if kind is ConstitutiveKind.TEVP:
            sample = tevp_sample(params, protocol, cfg, rng)
        else:
            sample = tensor_sample(kind, params, protocol, cfg, rng)
        sample.metadata.update(index=index)
        samples.append(sample)

    outputs = SCALAR_OUTPUTS if kind is ConstitutiveKind.TEVP else TENSOR_OUTPUTS
    attrs = {"model": kind.value, "protocol": protocol.value, "seed": seed, "params": asdict(params)}
    dataset = FieldDataset.from_samples(samples, UNITS, attrs)
    # gamma 只用于绘图，不作为训练输出
    dataset.attrs["output_channels"] = list(outputs)
    logger.info(f"🧪 生成 {n_samples} 个 {kind.value}/{protocol.value} 流变样本")
    return dataset
