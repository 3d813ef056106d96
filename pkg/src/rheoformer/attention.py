# Copyright (c) 2025 左岚. All rights reserved.
"""无 softmax 注意力模块

本模块实现傅里叶型与伽辽金型注意力核、面向任意查询点的交叉注意力，
以及对坐标做随机傅里叶投影的特征映射。

- 傅里叶型: Z = (Q·Kᵀ)·V / n，相当于用可学习核 κ(xᵢ, ξ) 做求积
- 伽辽金型: Z = Q·(Kᵀ·V) / n，利用结合律把代价降到 O(n·d²)
- 交叉注意力: Q 来自查询点 {yⱼ}，K/V 来自输入点 {xᵢ}，输出第 j 行只依赖 Q 的第 j 行
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Linear, Module
from .rheo_types import AttentionKind, ConfigurationError, DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_HEADS = 4
DEFAULT_FOURIER_SIGMA = 1.0


def _check_rows(name: str, Q: Tensor, K: Tensor, V: Tensor, same_query_rows: bool) -> int:
    for label, t in (("Q", Q), ("K", K), ("V", V)):
        if t.ndim != 2:
            raise DimensionError(f"{name}: {label} 必须是二维矩阵, 实际形状 {t.shape}")
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"{name}: K 与 V 行数不一致 {K.shape} 与 {V.shape}")
    if Q.shape[1] != K.shape[1]:
        raise DimensionError(f"{name}: Q 与 K 列数不一致 {Q.shape} 与 {K.shape}")
    if same_query_rows and Q.shape[0] != K.shape[0]:
        raise DimensionError(f"{name}: Q 与 K 行数不一致 {Q.shape} 与 {K.shape}")
    return K.shape[0]


def fourier_attention(Q: Tensor, K: Tensor, V: Tensor, cross: bool = False) -> Tensor:
    """傅里叶型注意力 Z = (Q·Kᵀ)·V / n，按定义的 O(n²) 次序计算

    cross=True 时查询行数 m 可以与输入行数 n 不同，代价 O(m·n·d)。
    """
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    n = _check_rows("fourier_attention", Q, K, V, same_query_rows=not cross)
    return T.matmul(T.matmul(Q, T.transpose(K)), V) / float(n)


def galerkin_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """伽辽金型注意力 Z = Q·(Kᵀ·V) / n，O(n·d²)"""
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    n = _check_rows("galerkin_attention", Q, K, V, same_query_rows=True)
    return T.matmul(Q, T.matmul(T.transpose(K), V)) / float(n)


def cross_attention(Q_query: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """交叉注意力 Z = Q·(Kᵀ·V) / n，查询行数 m 可以与输入行数 n 不同"""
    Q_query, K, V = T.as_tensor(Q_query), T.as_tensor(K), T.as_tensor(V)
    n = _check_rows("cross_attention", Q_query, K, V, same_query_rows=False)
    return T.matmul(Q_query, T.matmul(T.transpose(K), V)) / float(n)


_KERNELS = {
    AttentionKind.FOURIER: fourier_attention,
    AttentionKind.GALERKIN: galerkin_attention,
}

_CROSS_KERNELS = {
    AttentionKind.FOURIER: lambda q, k, v: fourier_attention(q, k, v, cross=True),
    AttentionKind.GALERKIN: cross_attention,
}


class FourierFeatureMap(Module):
    """随机傅里叶投影 γ(Y) = [cos(2πYB), sin(2πYB)]

    B ∈ R^{d₁×d₂} 的元素独立取自 N(0, σ²)，初始化后冻结，不参与训练。
    """

    def __init__(self, d1: int, d2: int, sigma: float = DEFAULT_FOURIER_SIGMA,
                 rng: Optional[np.random.Generator] = None, seed: Optional[int] = None) -> None:
        super().__init__()
        if d1 < 1 or d2 < 1:
            raise ConfigurationError(f"傅里叶特征维度必须为正: d1={d1}, d2={d2}")
        if sigma <= 0:
            raise ConfigurationError(f"傅里叶特征尺度 σ 必须为正, 实际 {sigma}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.sigma = sigma
        self.B = self.add_buffer("B", rng.normal(0.0, sigma, size=(d1, d2)))

    @property
    def d1(self) -> int:
        return self.B.shape[0]

    @property
    def d2(self) -> int:
        return self.B.shape[1]

    def __call__(self, Y: Union[Tensor, np.ndarray]) -> Tensor:
        return random_fourier_project(Y, self)


def random_fourier_project(Y: Union[Tensor, np.ndarray], feature_map: FourierFeatureMap) -> Tensor:
    """把 m×d₁ 坐标投影为 m×2d₂ 特征，前 d₂ 列为余弦、后 d₂ 列为正弦"""
    Y = T.as_tensor(Y)
    if Y.ndim != 2 or Y.shape[1] != feature_map.d1:
        raise DimensionError(f"random_fourier_project: 坐标形状 {Y.shape} 与 B {feature_map.B.shape} 不匹配")
    phase = T.matmul(Y, feature_map.B) * (2.0 * np.pi)
    return T.concat([T.cos(phase), T.sin(phase)], axis=1)


@dataclass
class AttentionHeadConfig:
    """多头注意力配置"""

    d_model: int
    n_heads: int = DEFAULT_HEADS
    kind: AttentionKind = AttentionKind.GALERKIN

    def validate(self) -> None:
        if self.d_model < 1 or self.n_heads < 1:
            raise ConfigurationError(f"d_model 与 n_heads 必须为正: {self.d_model}, {self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


class MultiHeadAttention(Module):
    """多头无 softmax 注意力

    各头均分 d_model 列；伽辽金型对 K、V 做层归一化，傅里叶型对 Q、K 做层归一化；
    各头输出拼接后经可学习的输出投影。context 为空时是自注意力，否则是交叉注意力。
    """

    def __init__(self, config: AttentionHeadConfig, rng: np.random.Generator) -> None:
        super().__init__()
        config.validate()
        self.config = config
        d = config.d_model
        self.w_q = self.add_module("w_q", Linear(d, d, rng, bias=False))
        self.w_k = self.add_module("w_k", Linear(d, d, rng, bias=False))
        self.w_v = self.add_module("w_v", Linear(d, d, rng, bias=False))
        self.w_o = self.add_module("w_o", Linear(d, d, rng, bias=True))
        self.first_norms: List[LayerNorm] = []
        self.second_norms: List[LayerNorm] = []
        for head in range(config.n_heads):
            self.first_norms.append(self.add_module(f"norm_a{head}", LayerNorm(config.head_dim)))
            self.second_norms.append(self.add_module(f"norm_b{head}", LayerNorm(config.head_dim)))

    def __call__(self, x: Tensor, context: Optional[Tensor] = None) -> Tensor:
        is_cross = context is not None
        context = x if context is None else context
        Q, K, V = self.w_q(x), self.w_k(context), self.w_v(context)
        width = self.config.head_dim
        heads = []
        for head in range(self.config.n_heads):
            cols = (slice(None), slice(head * width, (head + 1) * width))
            q, k, v = Q[cols], K[cols], V[cols]
            if self.config.kind is AttentionKind.GALERKIN:
                k, v = self.first_norms[head](k), self.second_norms[head](v)
            else:
                q, k = self.first_norms[head](q), self.second_norms[head](k)
            kernels = _CROSS_KERNELS if is_cross else _KERNELS
            heads.append(kernels[self.config.kind](q, k, v))
        return self.w_o(T.concat(heads, axis=1) if len(heads) > 1 else heads[0])

    def zero_output(self) -> None:
        """输出投影置零，使注意力分支恒为零"""
        self.w_o.weight.data = np.zeros_like(self.w_o.weight.data)
        self.w_o.bias.data = np.zeros_like(self.w_o.bias.data)
