# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 类型定义模块

本模块定义了项目中使用的核心枚举和异常类。
"""

from enum import Enum
from typing import Optional


class AttentionKind(Enum):
    """注意力核类型枚举"""

    FOURIER = "fourier"      # 傅里叶型: (QKᵀ)V/n
    GALERKIN = "galerkin"    # 伽辽金型: Q(KᵀV)/n


class ConstitutiveKind(Enum):
    """本构模型枚举"""

    TEVP = "tevp"            # 触变弹黏塑性模型
    GIESEKUS = "giesekus"    # Giesekus 模型
    OLDROYDB = "oldroydb"    # Oldroyd-B 模型


class Protocol(Enum):
    """流变测试加载协议枚举"""

    GRF = "grf"                  # 高斯随机场输入
    OSCILLATORY = "oscillatory"  # 振荡剪切
    SHEAR = "shear"              # 恒定简单剪切
    EXTENSION = "extension"      # 恒定平面拉伸


class FlowKind(Enum):
    """均匀流动类型枚举"""

    SIMPLE_SHEAR = "simple_shear"
    PLANAR_EXTENSION = "planar_extension"


# 自定义异常类
class RheoFormerError(Exception):
    """项目基础异常类，code 为稳定的错误码"""

    code = "E_RHEO"

    def __init__(self, message: str, code: Optional[str] = None) -> None:
        super().__init__(message)
        if code is not None:
            self.code = code


class DimensionError(RheoFormerError):
    """张量形状不匹配时抛出"""

    code = "E_DIM"


class GradientError(RheoFormerError):
    """反向传播调用不合法时抛出（非标量损失、空记录、重复调用）"""

    code = "E_GRAD"


class ConfigurationError(RheoFormerError):
    """参数非法、稳定性约束不满足或协方差分解失败时抛出"""

    code = "E_CONFIG"


class IntegrationError(RheoFormerError):
    """数值积分出现非有限状态时抛出"""

    code = "E_INTEGRATION"

    def __init__(self, message: str, step_index: int) -> None:
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


class DivergenceError(RheoFormerError):
    """潜空间推进或训练损失发散时抛出"""

    code = "E_DIVERGENCE"

    def __init__(self, message: str, t_index: Optional[int] = None, epoch: Optional[int] = None) -> None:
        where = []
        if t_index is not None:
            where.append(f"t_index={t_index}")
        if epoch is not None:
            where.append(f"epoch={epoch}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")
        self.t_index = t_index
        self.epoch = epoch


class DatasetFormatError(RheoFormerError):
    """数据集文件格式错误，不同原因使用不同错误码"""

    MAGIC = "E_MAGIC"                # 文件魔数不匹配
    SIZE = "E_SIZE"                  # 声明尺寸与负载长度不一致
    DUPLICATE_CHANNEL = "E_DUP_CHANNEL"  # 通道名重复
    SCHEMA = "E_SCHEMA"              # 通道/维度与模型不匹配
    HEADER = "E_HEADER"              # 头部无法解析或缺少字段

    code = HEADER


class CheckpointFormatError(RheoFormerError):
    """检查点文件格式错误时抛出"""

    code = "E_CHECKPOINT"
