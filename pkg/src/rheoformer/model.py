# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 网络模块

编码器、解码器与潜空间推进器组成的算子网络:

    编码: [取值, 坐标] → 前馈提升 → N × (自注意力 → 残差+层归一化 → 前馈 → 残差+层归一化)
    解码: 查询坐标 → 随机傅里叶投影 → 前馈 → 对编码特征做交叉注意力 → z₀
    推进: z_{t+1} = z_t + N(z_t)，N 为逐点共享的前馈网络
    输出: 逐点前馈网络 d_model → d_model/2 → out_channels

交叉注意力只在 t = 0 执行一次，此后的动力学完全在潜空间推进。
流变（0 维）问题以时间作坐标，跳过推进器，一次编码/解码完成函数到函数的映射。
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .attention import AttentionHeadConfig, FourierFeatureMap, MultiHeadAttention
from .layers import FeedForward, LayerNorm, Module
from .rheo_types import AttentionKind, ConfigurationError, DimensionError, DivergenceError
from .tensor import Tensor

logger = logging.getLogger(__name__)

TensorLike = Union[Tensor, np.ndarray]


@dataclass
class ModelConfig:
    """网络结构超参数；默认值为本项目自选"""

    in_channels: int
    out_channels: int
    coord_dim: int = 1
    d_model: int = 96
    n_heads: int = 4
    n_encoder_layers: int = 3
    attention_kind: str = AttentionKind.GALERKIN.value
    layer_attention_kinds: Optional[List[str]] = None    # 逐层覆盖 attention_kind
    propagator_width: int = 192
    propagator_depth: int = 2                             # 推进网络的线性层数
    fourier_dim: int = 48                                 # d₂
    fourier_sigma: float = 1.0
    nonlinearity: str = "gelu"
    seed: int = 0

    def validate(self) -> None:
        sizes = {
            "in_channels": self.in_channels, "out_channels": self.out_channels, "coord_dim": self.coord_dim,
            "d_model": self.d_model, "n_heads": self.n_heads, "n_encoder_layers": self.n_encoder_layers,
            "propagator_width": self.propagator_width, "propagator_depth": self.propagator_depth,
            "fourier_dim": self.fourier_dim,
        }
        bad = {k: v for k, v in sizes.items() if int(v) < 1}
        if bad:
            raise ConfigurationError(f"模型尺寸必须为正: {bad}")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")
        if self.fourier_sigma <= 0:
            raise ConfigurationError(f"fourier_sigma 必须为正, 实际 {self.fourier_sigma}")
        if self.nonlinearity not in T.NONLINEARITIES:
            raise ConfigurationError(f"不支持的非线性: {self.nonlinearity}")
        kinds = self.attention_kinds()
        if len(kinds) != self.n_encoder_layers:
            raise ConfigurationError(f"逐层注意力类型数 {len(kinds)} 与层数 {self.n_encoder_layers} 不一致")

    def attention_kinds(self) -> List[AttentionKind]:
        try:
            if self.layer_attention_kinds:
                return [AttentionKind(k) for k in self.layer_attention_kinds]
            return [AttentionKind(self.attention_kind)] * self.n_encoder_layers
        except ValueError as e:
            raise ConfigurationError(f"未知注意力类型: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        ignored = sorted(set(data) - set(known))
        if ignored:
            logger.warning(f"⚠️ ModelConfig 忽略未知字段: {ignored}")
        return cls(**known)


@dataclass
class LatentState:
    """查询点上的潜变量 z_t"""

    z: Tensor
    t_index: int = 0


class EncoderLayer(Module):
    """后归一化编码层"""

    def __init__(self, d_model: int, n_heads: int, kind: AttentionKind, nonlinearity: str,
                 rng: np.random.Generator) -> None:
        super().__init__()
        self.attn = self.add_module("attn", MultiHeadAttention(AttentionHeadConfig(d_model, n_heads, kind), rng))
        self.norm1 = self.add_module("norm1", LayerNorm(d_model))
        self.ffn = self.add_module("ffn", FeedForward([d_model, 2 * d_model, d_model], rng, nonlinearity))
        self.norm2 = self.add_module("norm2", LayerNorm(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ffn(x))

    def zero_branches(self) -> None:
        self.attn.zero_output()
        self.ffn.zero_output()


class RheOFormer(Module):
    """编码器-解码器-推进器算子网络"""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        act = config.nonlinearity

        self.lift = self.add_module("lift", FeedForward([config.in_channels + config.coord_dim, d, d], rng, act))
        self.encoder_layers: List[EncoderLayer] = []
        for index, kind in enumerate(config.attention_kinds()):
            layer = EncoderLayer(d, config.n_heads, kind, act, rng)
            self.encoder_layers.append(self.add_module(f"encoder.{index}", layer))

        self.fourier = self.add_module(
            "fourier", FourierFeatureMap(config.coord_dim, config.fourier_dim, config.fourier_sigma, rng=rng))
        self.query_ffn = self.add_module("query_ffn", FeedForward([2 * config.fourier_dim, d, d], rng, act))
        self.cross_attn = self.add_module(
            "cross_attn", MultiHeadAttention(AttentionHeadConfig(d, config.n_heads, AttentionKind.GALERKIN), rng))

        widths = [d] + [config.propagator_width] * (config.propagator_depth - 1) + [d]
        self.propagator = self.add_module("propagator", FeedForward(widths, rng, act))
        self.head = self.add_module("head", FeedForward([d, max(1, d // 2), config.out_channels], rng, act))

    # ---------- 编码 ----------
    def encode(self, values: TensorLike, coords: TensorLike) -> Tensor:
        """把 n 个采样点上的输入函数编码为 n×d_model 特征"""
        values, coords = T.as_tensor(values), T.as_tensor(coords)
        if values.ndim != 2 or values.shape[1] != self.config.in_channels:
            raise DimensionError(f"encode: 取值形状 {values.shape} 与 in_channels={self.config.in_channels} 不符")
        if coords.ndim != 2 or coords.shape[1] != self.config.coord_dim:
            raise DimensionError(f"encode: 坐标形状 {coords.shape} 与 coord_dim={self.config.coord_dim} 不符")
        if values.shape[0] != coords.shape[0]:
            raise DimensionError(f"encode: 取值 {values.shape} 与坐标 {coords.shape} 行数不一致")
        if not (T.all_finite(values) and T.all_finite(coords)):
            raise ConfigurationError("encode: 输入包含非有限值")
        x = self.lift(T.concat([values, coords], axis=1))
        for layer in self.encoder_layers:
            x = layer(x)
        return x

    # ---------- 解码 ----------
    def make_initial_latent(self, encoded: Tensor, query_coords: TensorLike) -> LatentState:
        """在 m 个查询点上形成 z₀ = h + cross_attn(h, encoded)"""
        query_coords = T.as_tensor(query_coords)
        if query_coords.ndim != 2 or query_coords.shape[1] != self.config.coord_dim:
            raise DimensionError(f"查询坐标形状 {query_coords.shape} 与 coord_dim={self.config.coord_dim} 不符")
        if encoded.ndim != 2 or encoded.shape[1] != self.config.d_model:
            raise DimensionError(f"编码特征形状 {encoded.shape} 与 d_model={self.config.d_model} 不符")
        h = self.query_ffn(self.fourier(query_coords))
        return LatentState(z=h + self.cross_attn(h, context=encoded), t_index=0)

    def decode_field(self, state: LatentState) -> Tensor:
        """逐点解码为 m×out_channels"""
        return self.head(state.z)

    # ---------- 推进 ----------
    def propagate(self, state: LatentState) -> LatentState:
        z = state.z + self.propagator(state.z)
        if not T.all_finite(z):
            raise DivergenceError("潜变量出现非有限值", t_index=state.t_index + 1)
        return LatentState(z=z, t_index=state.t_index + 1)

    def forward_static(self, values: TensorLike, coords: TensorLike, query_coords: TensorLike) -> Tensor:
        """单次编码/解码（流变问题），不经过推进器"""
        return self.decode_field(self.make_initial_latent(self.encode(values, coords), query_coords))

    def iter_rollout(self, values: TensorLike, coords: TensorLike, query_coords: TensorLike,
                     n_future: int) -> Iterator[Tensor]:
        """逐步产出未来 n_future 个解码场；编码只执行一次

        惰性消费并处于 no_grad 时，内存占用与步数无关。
        """
        if n_future < 0:
            raise ConfigurationError(f"n_future 不能为负, 实际 {n_future}")
        if n_future == 0:
            return
        state = self.make_initial_latent(self.encode(values, coords), query_coords)
        for _ in range(n_future):
            state = self.propagate(state)
            yield self.decode_field(state)

    def rollout(self, input_snapshots: Sequence[np.ndarray], coords: np.ndarray,
                query_coords: np.ndarray, n_future: int) -> List[np.ndarray]:
        """以 k 个快照为条件做推理，返回 n_future 个 m×channels 数组"""
        values = stack_snapshots(input_snapshots)
        with T.no_grad():
            return [field.numpy() for field in self.iter_rollout(values, coords, query_coords, n_future)]

    # ---------- 诊断 ----------
    def zero_residual_branches(self) -> None:
        """编码层的注意力与前馈分支输出置零"""
        for layer in self.encoder_layers:
            layer.zero_branches()

    def zero_propagator(self) -> None:
        """推进网络输出置零，推进变为恒等映射"""
        self.propagator.zero_output()


def stack_snapshots(snapshots: Sequence[np.ndarray]) -> np.ndarray:
    """把 k 个 n×C 快照按通道拼接为 n×(k·C)，列序为 [s₀c₀..s₀c_C, s₁c₀..]"""
    snapshots = [np.asarray(s, dtype=np.float64) for s in snapshots]
    if not snapshots:
        raise ConfigurationError("至少需要一个条件快照")
    shapes = {s.shape for s in snapshots}
    if len(shapes) != 1 or snapshots[0].ndim != 2:
        raise DimensionError(f"条件快照形状不一致或非二维: {sorted(shapes)}")
    return np.concatenate(snapshots, axis=1)


def propagator_jacobian_norm(model: RheOFormer, state: LatentState, row: int = 0) -> float:
    """z ↦ z + N(z) 在单行潜变量处的雅可比矩阵谱范数，逐输出分量反向求得

    推进器参数上已累积的梯度在返回前原样恢复。
    """
    params = model.propagator.parameters()
    saved = [None if p.grad is None else p.grad.copy() for p in params]
    z_row = state.z.data[row:row + 1]
    d = z_row.shape[1]
    jacobian = np.empty((d, d))
    try:
        for i in range(d):
            leaf = Tensor(z_row, requires_grad=True)
            out = leaf + model.propagator(leaf)
            out[0, i].backward()
            jacobian[i] = leaf.grad[0]
    finally:
        for param, grad in zip(params, saved):
            param.grad = grad
    return float(np.linalg.norm(jacobian, 2))
