# Copyright (c) 2025 左岚. All rights reserved.
"""网络层模块

本模块提供带命名参数的层容器（Module）以及线性层、层归一化和逐点前馈网络。
参数名采用点分路径（如 encoder.layers.0.attn.w_q），检查点按名称存取。
"""

import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .rheo_types import CheckpointFormatError, ConfigurationError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Module:
    """层容器基类：登记可训练参数、冻结缓冲区和子模块"""

    def __init__(self) -> None:
        self._parameters: Dict[str, Tensor] = {}
        self._buffers: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        param = Tensor(value, requires_grad=True, name=name)
        self._parameters[name] = param
        return param

    def add_buffer(self, name: str, value: np.ndarray) -> Tensor:
        """冻结数组：参与前向与存档，但不训练"""
        buffer = Tensor(value, requires_grad=False, name=name)
        self._buffers[name] = buffer
        return buffer

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, buffer in self._buffers.items():
            yield prefix + name, buffer
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def parameters(self) -> List[Tensor]:
        return [param for _, param in self.named_parameters()]

    def zero_grad(self) -> None:
        T.zero_grad(self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        """参数与缓冲区的数组副本"""
        state = {name: param.data.copy() for name, param in self.named_parameters()}
        state.update({name: buffer.data.copy() for name, buffer in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """按名称载入全部数组，名称或形状不一致即报错"""
        targets = dict(self.named_parameters())
        targets.update(self.named_buffers())
        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise CheckpointFormatError(f"权重名称不匹配 - 缺少: {missing}, 多余: {unexpected}")
        for name, target in targets.items():
            array = np.asarray(state[name], dtype=np.float64)
            if array.shape != target.shape:
                raise CheckpointFormatError(f"权重 {name} 形状不匹配: 期望 {target.shape}, 实际 {array.shape}")
            target.data = array.copy()
            target.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([param.data.size for param in self.parameters()]))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    """仿射层 y = x·W + b"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter("weight", xavier_uniform(rng, in_features, out_features))
        self.bias = self.add_parameter("bias", np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    """逐行层归一化，带可学习的增益与偏置"""

    def __init__(self, features: int, eps: float = T.LAYER_NORM_EPS) -> None:
        super().__init__()
        self.eps = eps
        self.gain = self.add_parameter("gain", np.ones(features))
        self.bias = self.add_parameter("bias", np.zeros(features))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    """逐点前馈网络：线性层之间插入非线性，最后一层之后不加"""

    def __init__(
        self,
        dims: Sequence[int],
        rng: np.random.Generator,
        nonlinearity: str = "gelu",
        final_bias: bool = True,
    ) -> None:
        super().__init__()
        if len(dims) < 2:
            raise ConfigurationError(f"前馈网络至少需要输入和输出宽度, 实际 {list(dims)}")
        if nonlinearity not in T.NONLINEARITIES:
            raise ConfigurationError(f"不支持的非线性: {nonlinearity}，可选 {sorted(T.NONLINEARITIES)}")
        self.activation: Callable[[Tensor], Tensor] = T.NONLINEARITIES[nonlinearity]
        self.layers: List[Linear] = []
        for index, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            is_last = index == len(dims) - 2
            layer = Linear(fan_in, fan_out, rng, bias=final_bias or not is_last)
            self.layers.append(self.add_module(str(index), layer))

    def __call__(self, x: Tensor) -> Tensor:
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = self.activation(x)
        return x

    def zero_output(self) -> None:
        """把最后一层置零，使该分支输出恒为零（残差恒等）"""
        last = self.layers[-1]
        last.weight.data = np.zeros_like(last.weight.data)
        if last.bias is not None:
            last.bias.data = np.zeros_like(last.bias.data)

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features


def global_grad_norm(params: Sequence[Tensor], grads: Optional[Sequence[np.ndarray]] = None) -> float:
    grads = grads if grads is not None else [p.grad for p in params]
    total = 0.0
    for grad in grads:
        if grad is not None:
            total += float(np.sum(grad * grad))
    return float(np.sqrt(total))
