# Copyright (c) 2025 左岚. All rights reserved.
"""本构模型积分模块

本模块在给定的均匀变形历史下积分三类本构模型，既用来生成训练数据，也作为验证基准:

- TEVP（触变弹黏塑性）: 剪切应力 σ₁₂ 与结构参数 λ 的耦合常微分方程
- Giesekus: σ + τ₁σ∇ + (α/G₀)σ·σ = G₀τ₁(γ̇ + τ₂γ̇∇)
- Oldroyd-B: α = 0 的 Giesekus

上随体导数约定: A∇ = ∂A/∂t + u·∇A − L·A − A·Lᵀ，其中 L_ij = ∂u_i/∂x_j。
均匀流动下对流项为零。积分器为定步长经典四阶龙格-库塔，
采样点之间的输入用三次样条插值（不足 4 个点时退化为线性插值）。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .rheo_types import ConfigurationError, IntegrationError

logger = logging.getLogger(__name__)

RK4_SAFETY = 50.0  # 步长取最快时间尺度的 1/50


# ========== 参数与状态 ==========
@dataclass(frozen=True)
class TevpParams:
    """TEVP 材料参数"""

    G: float           # 弹性模量 (Pa)
    sigma_y: float     # 屈服应力 (Pa)
    eta_s: float       # 溶剂黏度 (Pa·s)
    eta_p: float       # 塑性黏度 (Pa·s)
    k_plus: float      # 结构重建速率 (1/s)
    k_minus: float     # 结构破坏速率 (1/s)

    def validate(self) -> None:
        if min(self.G, self.eta_s, self.eta_p) <= 0:
            raise ConfigurationError(f"TEVP 参数 G、η_s、η_p 必须为正: {self}")
        if self.sigma_y < 0 or self.k_plus < 0 or self.k_minus < 0:
            raise ConfigurationError(f"TEVP 参数 σ_y、k₊、k₋ 不能为负: {self}")

    @property
    def stress_time(self) -> float:
        """应力弛豫时间尺度 (η_s+η_p)/G"""
        return (self.eta_s + self.eta_p) / self.G


@dataclass(frozen=True)
class TevpState:
    """TEVP 状态；lam 即结构参数 λ ∈ [0, 1]"""

    sigma12: float
    lam: float


@dataclass(frozen=True)
class GiesekusParams:
    """Giesekus 材料参数"""

    tau1: float        # 松弛时间 (s)
    tau2: float        # 延迟时间 (s)
    G0: float          # 弹性模量 (Pa)
    alpha: float       # 迁移率因子

    def validate(self) -> None:
        if self.tau1 <= 0 or self.G0 <= 0:
            raise ConfigurationError(f"τ₁ 与 G₀ 必须为正: {self}")
        if not 0 <= self.tau2 <= self.tau1:
            raise ConfigurationError(f"需要 0 ≤ τ₂ ≤ τ₁: {self}")
        if not 0 <= self.alpha <= 0.5:
            raise ConfigurationError(f"需要 0 ≤ α ≤ 0.5: {self}")


@dataclass(frozen=True)
class OldroydBParams:
    """Oldroyd-B 材料参数（无迁移率因子）"""

    tau1: float
    tau2: float
    G0: float

    def as_giesekus(self) -> GiesekusParams:
        return GiesekusParams(tau1=self.tau1, tau2=self.tau2, G0=self.G0, alpha=0.0)

    def validate(self) -> None:
        self.as_giesekus().validate()


@dataclass(frozen=True)
class SymTensor2:
    """对称二阶张量，xy 分量同时代表 yx"""

    xx: float
    yy: float
    xy: float

    @classmethod
    def zero(cls) -> "SymTensor2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "SymTensor2":
        return cls(float(matrix[0, 0]), float(matrix[1, 1]), float(0.5 * (matrix[0, 1] + matrix[1, 0])))

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    def scaled(self, factor: float) -> "SymTensor2":
        return SymTensor2(self.xx * factor, self.yy * factor, self.xy * factor)

    @property
    def n1(self) -> float:
        """第一法向应力差 N₁ = σ₁₁ − σ₂₂"""
        return self.xx - self.yy


# 速度梯度 L_ij = ∂u_i/∂x_j，单个为 2×2 数组，序列为 (n, 2, 2) 数组
VelocityGradient2 = np.ndarray


def rate_of_deformation(L: VelocityGradient2) -> SymTensor2:
    """变形率张量 γ̇ = L + Lᵀ"""
    return SymTensor2.from_matrix(L + L.T)


@dataclass
class TevpSeries:
    """TEVP 积分结果"""

    sigma12: np.ndarray
    lam: np.ndarray

    def __len__(self) -> int:
        return len(self.sigma12)

    def __getitem__(self, index: int) -> TevpState:
        return TevpState(float(self.sigma12[index]), float(self.lam[index]))

    @property
    def terminal(self) -> TevpState:
        return self[len(self) - 1]


@dataclass
class SymTensorSeries:
    """张量应力时间序列"""

    xx: np.ndarray
    yy: np.ndarray
    xy: np.ndarray

    def __len__(self) -> int:
        return len(self.xx)

    def __getitem__(self, index: int) -> SymTensor2:
        return SymTensor2(float(self.xx[index]), float(self.yy[index]), float(self.xy[index]))

    @property
    def n1(self) -> np.ndarray:
        return self.xx - self.yy

    @property
    def terminal(self) -> SymTensor2:
        return self[len(self) - 1]

    def as_array(self) -> np.ndarray:
        return np.stack([self.xx, self.yy, self.xy], axis=1)

    def channels(self) -> Dict[str, np.ndarray]:
        """σ₁₁、σ₂₂、σ₁₂、σ₂₁ 四个输出通道（σ₂₁ 与 σ₁₂ 相同）"""
        return {"sigma_xx": self.xx, "sigma_yy": self.yy, "sigma_xy": self.xy, "sigma_yx": self.xy.copy()}


# ========== 通用积分工具 ==========
class SeriesInterpolant:
    """均匀采样序列的连续插值（三次样条，点数不足时线性）"""

    def __init__(self, values: np.ndarray, dt: float) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.times = dt * np.arange(len(values))
        self.values = values
        self._spline = CubicSpline(self.times, values, axis=0) if len(values) >= 4 else None

    def __call__(self, t: float) -> np.ndarray:
        if self._spline is not None:
            return self._spline(t)
        if len(self.values) == 1:
            return self.values[0]
        flat = self.values.reshape(len(self.values), -1)
        out = np.array([np.interp(t, self.times, flat[:, k]) for k in range(flat.shape[1])])
        return out.reshape(self.values.shape[1:])


def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    """经典四阶龙格-库塔单步"""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    n_samples: int,
    dt: float,
    substeps: int = 1,
    post_step: Callable[[np.ndarray], np.ndarray] = None,
) -> np.ndarray:
    """在均匀采样网格上积分，每个采样间隔走 substeps 个 RK4 子步

    Returns:
        (n_samples, len(y0)) 数组，第 0 行为初值
    """
    if dt <= 0:
        raise ConfigurationError(f"时间步长必须为正, 实际 {dt}")
    if substeps < 1:
        raise ConfigurationError(f"子步数必须 ≥ 1, 实际 {substeps}")
    y = np.asarray(y0, dtype=np.float64).copy()
    out = np.empty((n_samples, y.size))
    out[0] = y
    h = dt / substeps
    for i in range(1, n_samples):
        t0 = (i - 1) * dt
        for s in range(substeps):
            y = rk4_step(rhs, t0 + s * h, y, h)
            if post_step is not None:
                y = post_step(y)
        if not np.all(np.isfinite(y)):
            raise IntegrationError("积分状态出现非有限值, 步长可能过大", step_index=i)
        out[i] = y
    return out


def _check_finite_input(series: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(np.asarray(series, dtype=np.float64).reshape(len(series), -1)).all(axis=1))
    if bad.size:
        raise IntegrationError("输入序列包含非有限值", step_index=int(bad[0]))


def substeps_for(dt: float, fastest_time: float) -> int:
    """使子步长不超过 fastest_time/50 的最小子步数"""
    if fastest_time <= 0 or not np.isfinite(fastest_time):
        return 1
    return max(1, int(np.ceil(dt * RK4_SAFETY / fastest_time)))


# ========== TEVP ==========
def tevp_rhs(params: TevpParams, state: TevpState, gamma_dot: float) -> Tuple[float, float]:
    """TEVP 右端项 (dσ₁₂/dt, dλ/dt)"""
    eta_total = params.eta_s + params.eta_p
    dsigma = params.G / eta_total * (
        -state.sigma12 + params.sigma_y * state.lam + (params.eta_s + params.eta_p * state.lam) * gamma_dot
    )
    dlam = params.k_plus * (1.0 - state.lam) - params.k_minus * state.lam * abs(gamma_dot)
    return dsigma, dlam


def tevp_steady_state(params: TevpParams, gamma_dot: float) -> Tuple[float, float]:
    """恒定剪切率下的解析不动点 (λ_ss, σ_ss)"""
    rate = params.k_plus + params.k_minus * abs(gamma_dot)
    if rate == 0:
        raise ConfigurationError("k₊ + k₋|γ̇| = 0，稳态结构参数无定义")
    lam_ss = params.k_plus / rate
    sigma_ss = params.sigma_y * lam_ss + (params.eta_s + params.eta_p * lam_ss) * gamma_dot
    return lam_ss, sigma_ss


def tevp_fastest_time(params: TevpParams, max_rate: float) -> float:
    kinetics = params.k_plus + params.k_minus * abs(max_rate)
    times = [params.stress_time]
    if kinetics > 0:
        times.append(1.0 / kinetics)
    return min(times)


def integrate_tevp(
    params: TevpParams,
    gamma_dot_series: np.ndarray,
    dt: float,
    init: TevpState,
    substeps: int = 1,
) -> TevpSeries:
    """在采样剪切率历史下积分 TEVP，每步后把 λ 截断到 [0, 1]

    Args:
        params: 材料参数
        gamma_dot_series: 均匀采样的剪切率 (1/s)
        dt: 采样间隔 (s)
        init: 初始状态
        substeps: 每个采样间隔内的 RK4 子步数

    Returns:
        与输入等长的状态序列
    """
    params.validate()
    gamma_dot_series = np.asarray(gamma_dot_series, dtype=np.float64)
    _check_finite_input(gamma_dot_series)
    rate = SeriesInterpolant(gamma_dot_series, dt)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        dsigma, dlam = tevp_rhs(params, TevpState(y[0], y[1]), float(rate(t)))
        return np.array([dsigma, dlam])

    clamps = 0

    def clamp(y: np.ndarray) -> np.ndarray:
        nonlocal clamps
        if y[1] < 0.0 or y[1] > 1.0:
            clamps += 1
            y[1] = min(1.0, max(0.0, y[1]))
        return y

    out = integrate_rk4(rhs, np.array([init.sigma12, init.lam]), len(gamma_dot_series), dt, substeps, clamp)
    if clamps:
        logger.debug(f"TEVP 积分中 λ 被截断 {clamps} 次")
    return TevpSeries(sigma12=out[:, 0], lam=out[:, 1])


# ========== Giesekus / Oldroyd-B ==========
def upper_convected_derivative_rhs(A: SymTensor2, dA_dt: SymTensor2, L: VelocityGradient2) -> SymTensor2:
    """均匀流动下的上随体导数 dA/dt − L·A − A·Lᵀ"""
    A_m = A.as_matrix()
    return SymTensor2.from_matrix(dA_dt.as_matrix() - L @ A_m - A_m @ L.T)


def _giesekus_rhs(params: GiesekusParams, sigma: np.ndarray, L: np.ndarray, rate_dot: np.ndarray) -> np.ndarray:
    """由 Giesekus 方程解出 ∂σ/∂t（矩阵形式）"""
    rate = L + L.T
    rate_ucd = rate_dot - L @ rate - rate @ L.T
    source = params.G0 * params.tau1 * (rate + params.tau2 * rate_ucd)
    return L @ sigma + sigma @ L.T + (source - sigma - (params.alpha / params.G0) * (sigma @ sigma)) / params.tau1


def integrate_giesekus(
    params: GiesekusParams,
    L_series: np.ndarray,
    dt: float,
    init: SymTensor2,
    substeps: int = 1,
) -> SymTensorSeries:
    """在采样速度梯度历史下积分 Giesekus 模型

    dγ̇/dt 由输入序列的有限差分给出（内部中心差分，端点单侧差分）。

    Args:
        params: 材料参数
        L_series: (n, 2, 2) 速度梯度序列
        dt: 采样间隔 (s)
        init: 初始应力
        substeps: 每个采样间隔内的 RK4 子步数

    Returns:
        与输入等长的应力序列
    """
    params.validate()
    L_series = np.asarray(L_series, dtype=np.float64)
    if L_series.ndim != 3 or L_series.shape[1:] != (2, 2):
        raise ConfigurationError(f"速度梯度序列形状应为 (n, 2, 2), 实际 {L_series.shape}")
    _check_finite_input(L_series)
    n = len(L_series)
    if n == 1:
        return SymTensorSeries(np.array([init.xx]), np.array([init.yy]), np.array([init.xy]))

    rates = L_series + np.transpose(L_series, (0, 2, 1))
    rate_dot = np.gradient(rates, dt, axis=0, edge_order=2 if n >= 3 else 1)
    L_of_t = SeriesInterpolant(L_series, dt)
    rate_dot_of_t = SeriesInterpolant(rate_dot, dt)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        sigma = np.array([[y[0], y[2]], [y[2], y[1]]])
        d = _giesekus_rhs(params, sigma, L_of_t(t), rate_dot_of_t(t))
        return np.array([d[0, 0], d[1, 1], 0.5 * (d[0, 1] + d[1, 0])])

    out = integrate_rk4(rhs, np.array([init.xx, init.yy, init.xy]), n, dt, substeps)
    return SymTensorSeries(xx=out[:, 0], yy=out[:, 1], xy=out[:, 2])


def integrate_oldroydb(
    params: OldroydBParams,
    L_series: np.ndarray,
    dt: float,
    init: SymTensor2,
    substeps: int = 1,
) -> SymTensorSeries:
    """Oldroyd-B 积分，即 α = 0 的 Giesekus"""
    return integrate_giesekus(params.as_giesekus(), L_series, dt, init, substeps)


def oldroydb_extension_steady_state(params: OldroydBParams, strain_rate: float) -> SymTensor2:
    """平面拉伸 L = diag(ε̇, −ε̇) 下 Oldroyd-B 的解析稳态

    令 ∂σ/∂t = 0 逐分量求解；要求 2τ₁|ε̇| < 1。
    """
    e, t1, t2, g0 = strain_rate, params.tau1, params.tau2, params.G0
    if 2.0 * t1 * abs(e) >= 1.0:
        raise ConfigurationError(f"2τ₁ε̇ = {2 * t1 * e:.3f}，拉伸稳态不存在")
    xx = 2.0 * g0 * t1 * e * (1.0 - 2.0 * t2 * e) / (1.0 - 2.0 * t1 * e)
    yy = -2.0 * g0 * t1 * e * (1.0 + 2.0 * t2 * e) / (1.0 + 2.0 * t1 * e)
    return SymTensor2(xx, yy, 0.0)


def oldroydb_shear_steady_state(params: OldroydBParams, shear_rate: float) -> SymTensor2:
    """简单剪切下 Oldroyd-B 的解析稳态: σ_xy = G₀τ₁γ̇, N₁ = 2G₀τ₁(τ₁−τ₂)γ̇²"""
    g0, t1, t2 = params.G0, params.tau1, params.tau2
    return SymTensor2(2.0 * g0 * t1 * (t1 - t2) * shear_rate ** 2, 0.0, g0 * t1 * shear_rate)
