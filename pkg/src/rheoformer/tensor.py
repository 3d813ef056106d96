# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 张量与反向模式自动微分模块

本模块提供 64 位浮点稠密张量和一个按拓扑序记录的计算图，
所有注意力与网络运算都建立在这里的原语之上。

约定:
- 数据为行主序 float64，形状各维均为正数
- 广播只允许两种情形: 标量与任意张量、(d,) 行向量与 (n, d) 矩阵
- 前向只读；只有 grad 缓冲区会累加
"""

import logging
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .rheo_types import DimensionError, GradientError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYER_NORM_EPS = 1e-5
_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# 每个线程独立的梯度开关，多个模型实例可在不同线程中并行
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """当前线程是否记录计算图"""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """推理上下文：不记录计算图，中间结果可被及时回收"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Node:
    """计算图中的一个原语节点，保存反向所需的输入引用与闭包"""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn) -> None:
        self.op = op
        self.inputs = inputs
        self.backward_fn: Optional[BackwardFn] = backward_fn

    @property
    def consumed(self) -> bool:
        """反向传播后闭包被释放"""
        return self.backward_fn is None


class Tensor:
    """参与反向模式自动微分的稠密 float64 张量"""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        array = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"张量各维必须为正数, 实际形状 {array.shape}")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    # ---------- 基本属性 ----------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def node(self) -> Optional[Node]:
        return self._node

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        """返回数据副本"""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() 需要单元素张量, 实际形状 {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---------- 运算符 ----------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    # ---------- 反向传播 ----------
    def backward(self) -> None:
        """从标量损失出发反向传播，把 ∂loss/∂leaf 累加到叶子的 grad"""
        if self.data.size != 1:
            raise GradientError(f"backward 需要标量损失, 实际形状 {self.shape}")
        if self._node is None:
            raise GradientError("计算记录为空: 损失不是由已记录的运算得到的")
        if self._node.consumed:
            raise GradientError("同一计算记录不能重复反向传播, 请重新前向计算")
        record = ComputationRecord.trace(self)
        record.run(self)


class ComputationRecord:
    """按拓扑序排列的原语节点列表（每个节点的输入排在其之前）"""

    def __init__(self, ordered: List[Tensor]) -> None:
        self.ordered = ordered

    def __len__(self) -> int:
        return len(self.ordered)

    @property
    def ops(self) -> List[str]:
        return [tensor._node.op for tensor in self.ordered]

    @classmethod
    def trace(cls, output: Tensor) -> "ComputationRecord":
        """从输出张量出发做迭代后序遍历，得到拓扑序"""
        ordered: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                ordered.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor._node.inputs:
                if parent._node is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(ordered)

    def run(self, output: Tensor) -> None:
        """逆拓扑序执行一次反向，每个节点恰好访问一次，执行后释放闭包"""
        pending = {id(output): np.ones_like(output.data)}
        for tensor in reversed(self.ordered):
            node = tensor._node
            upstream = pending.pop(id(tensor), None)
            backward_fn = node.backward_fn
            node.backward_fn = None
            if upstream is None:
                continue
            if backward_fn is None:
                raise GradientError(f"节点 {node.op} 已经参与过反向传播")
            parent_grads = backward_fn(upstream)
            for parent, grad in zip(node.inputs, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    parent.grad = grad.copy() if parent.grad is None else parent.grad + grad
                else:
                    key = id(parent)
                    pending[key] = grad if key not in pending else pending[key] + grad
        logger.debug(f"反向传播完成 - 节点数: {len(self.ordered)}")


# ========== 内部工具 ==========
def as_tensor(value: ArrayLike) -> Tensor:
    """把常数包装为不需要梯度的张量"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """构造运算结果；只有在需要梯度时才挂接节点"""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs_grad
    out._node = Node(op, inputs, backward_fn) if needs_grad else None
    return out


def _broadcast_shape(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0 or (len(a) == 1 and a[0] == 1 and len(b) != 1):
        return b
    if len(b) == 0 or (len(b) == 1 and b[0] == 1 and len(a) != 1):
        return a
    if len(a) == 2 and b == (a[1],):
        return a
    if len(b) == 2 and a == (b[1],):
        return b
    raise DimensionError(f"{op}: 形状不兼容 {a} 与 {b}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把梯度规约回输入形状（与 _broadcast_shape 允许的情形对应）"""
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    if shape == (1,):
        return np.asarray([grad.sum()])
    return grad.sum(axis=0)


# ========== 逐元素运算 ==========
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        grad_a = _unbroadcast(g * b_data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(g * a_data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return _result("mul", a_data * b_data, (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    out = a_data / b_data

    def backward(g: np.ndarray):
        grad_a = _unbroadcast(g / b_data, a.shape) if a.requires_grad else None
        grad_b = _unbroadcast(-g * out / b_data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return _result("div", out, (a, b), backward)


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    a_data = a.data
    return _result("square", a_data * a_data, (a,), lambda g: (2.0 * a_data * g,))


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def cos(a: Tensor) -> Tensor:
    a = as_tensor(a)
    a_data = a.data
    return _result("cos", np.cos(a_data), (a,), lambda g: (-g * np.sin(a_data),))


def sin(a: Tensor) -> Tensor:
    a = as_tensor(a)
    a_data = a.data
    return _result("sin", np.sin(a_data), (a,), lambda g: (g * np.cos(a_data),))


def gelu(x: Tensor) -> Tensor:
    """逐元素 GELU（精确 erf 形式），处处可微"""
    x = as_tensor(x)
    x_data = x.data
    cdf = 0.5 * (1.0 + erf(x_data / _SQRT_2))

    def backward(g: np.ndarray):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x_data * x_data)
        return (g * (cdf + x_data * pdf),)

    return _result("gelu", x_data * cdf, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


pointwise_nonlinearity = gelu

NONLINEARITIES = {"gelu": gelu, "tanh": tanh}


# ========== 矩阵与归约 ==========
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """二维矩阵乘法 [m×k]·[k×p]"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: 内维不匹配 {a.shape} 与 {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        grad_a = g @ b_data.T if a.requires_grad else None
        grad_b = a_data.T @ g if b.requires_grad else None
        return grad_a, grad_b

    return _result("matmul", a_data @ b_data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose 需要二维张量, 实际形状 {a.shape}")
    return _result("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    """求和；axis=None 得到标量, axis=0 得到逐列和"""
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _result("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g),))
    if axis != 0 or a.ndim != 2:
        raise DimensionError(f"sum 只支持 axis=None 或对二维张量 axis=0, 实际形状 {shape}")
    return _result("sum0", a.data.sum(axis=0), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return sum(a) / float(a.data.size)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """逐行标准化（分母 sqrt(var+eps)）后按行仿射"""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: 形状不兼容 x={x.shape}, gain={gain.shape}, bias={bias.shape}")
    if eps <= 0:
        raise DimensionError(f"layer_norm: eps 必须为正, 实际 {eps}")
    centered = x.data - x.data.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    x_hat = centered * inv_std
    gain_data = gain.data

    def backward(g: np.ndarray):
        grad_x = None
        if x.requires_grad:
            d_hat = g * gain_data
            grad_x = inv_std * (
                d_hat
                - d_hat.mean(axis=1, keepdims=True)
                - x_hat * (d_hat * x_hat).mean(axis=1, keepdims=True)
            )
        grad_gain = (g * x_hat).sum(axis=0) if gain.requires_grad else None
        grad_bias = g.sum(axis=0) if bias.requires_grad else None
        return grad_x, grad_gain, grad_bias

    return _result("layer_norm", x_hat * gain_data + bias.data, (x, gain, bias), backward)


# ========== 结构运算 ==========
def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """沿 axis 拼接二维张量"""
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat: 至少需要一个张量")
    for t in tensors:
        if t.ndim != 2:
            raise DimensionError(f"concat 需要二维张量, 实际形状 {t.shape}")
        other = 1 - axis
        if t.shape[other] != tensors[0].shape[other]:
            raise DimensionError(f"concat: 形状不兼容 {tensors[0].shape} 与 {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray):
        if axis == 1:
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result("concat", data, tensors, backward)


def take(a: Tensor, index) -> Tensor:
    """基本索引（切片/整数），反向把梯度散回原位置"""
    a = as_tensor(a)
    data = np.array(a.data[index], dtype=np.float64)
    if data.size == 0:
        raise DimensionError(f"索引 {index!r} 在形状 {a.shape} 上得到空张量")
    shape = a.shape

    def backward(g: np.ndarray):
        grad = np.zeros(shape)
        grad[index] = g
        return (grad,)

    return _result("take", data, (a,), backward)


# ========== 辅助 ==========
def zero_grad(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.grad = None


def all_finite(tensor: Tensor) -> bool:
    return bool(np.all(np.isfinite(tensor.data)))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-6,
    rel_tol: float = 1e-5,
    abs_tol: float = 1e-8,
    small: float = 1e-3,
) -> float:
    """用中心差分校验反向梯度

    Args:
        fn: 接收若干张量、返回标量张量的函数
        inputs: 各输入的数值
        step: 差分步长
        rel_tol: 相对误差阈值
        abs_tol: 真梯度小于 small 时使用的绝对误差阈值
        small: 切换到绝对误差的梯度量级

    Returns:
        最大相对误差（小梯度处记为绝对误差与 abs_tol 的比例缩放值）

    Raises:
        GradientError: 任一元素超出阈值
    """
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    loss = fn(*leaves)
    loss.backward()
    worst = 0.0
    for position, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        base = [np.array(x, dtype=np.float64) for x in inputs]
        numeric = np.zeros_like(base[position])
        flat = numeric.reshape(-1)
        for k in range(flat.size):
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[position].reshape(-1)[k] += step
            minus[position].reshape(-1)[k] -= step
            with no_grad():
                f_plus = fn(*[Tensor(p) for p in plus]).item()
                f_minus = fn(*[Tensor(m) for m in minus]).item()
            flat[k] = (f_plus - f_minus) / (2.0 * step)
        diff = np.abs(analytic - numeric)
        scale = np.abs(numeric)
        for d, s in zip(diff.reshape(-1), scale.reshape(-1)):
            if s < small:
                if d > abs_tol:
                    raise GradientError(f"输入 {position}: 梯度绝对误差 {d:.3e} 超过 {abs_tol:.1e}")
                worst = max(worst, d / abs_tol * rel_tol)
            else:
                rel = d / s
                if rel > rel_tol:
                    raise GradientError(f"输入 {position}: 梯度相对误差 {rel:.3e} 超过 {rel_tol:.1e}")
                worst = max(worst, rel)
    return worst
