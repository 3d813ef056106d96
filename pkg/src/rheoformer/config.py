# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 配置管理模块

本模块提供集中化的配置管理，支持 .env 文件、环境变量和默认值。
材料参数默认值中只有松弛时间来自文献（Giesekus τ₁=1 s，Oldroyd-B τ₁=0.1 s），
其余常数均为本项目自行选定。
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from dotenv import load_dotenv

from .constitutive import GiesekusParams, OldroydBParams, TevpParams
from .flow1d import ChannelConfig

logger = logging.getLogger(__name__)

# 获取当前文件所在目录的绝对路径
_CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
_DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


@dataclass
class LoggingConfig:
    """日志配置类"""

    level: str = "INFO"                                          # 日志级别
    format: str = _DEFAULT_LOG_FORMAT                            # 日志格式


@dataclass
class RuntimeConfig:
    """运行时配置类"""

    seed: int = 0                                                # 全局随机种子（RHEO_SEED）
    output_dir: str = "runs"                                     # 默认输出目录


@dataclass
class MaterialDefaults:
    """材料参数默认值（随仓库附带的示例配置）"""

    tevp: TevpParams = field(default_factory=lambda: TevpParams(
        G=1.0, sigma_y=1.0, eta_s=0.1, eta_p=1.0, k_plus=0.2, k_minus=0.5))
    giesekus: GiesekusParams = field(default_factory=lambda: GiesekusParams(
        tau1=1.0, tau2=0.2, G0=1.0, alpha=0.3))                 # τ₁=1 s 取自文献
    oldroydb: OldroydBParams = field(default_factory=lambda: OldroydBParams(
        tau1=0.1, tau2=0.02, G0=10.0))                           # τ₁=0.1 s 取自文献
    channel: ChannelConfig = field(default_factory=ChannelConfig)


@dataclass
class RheoSettings:
    """项目主配置类"""

    logging: LoggingConfig
    runtime: RuntimeConfig
    materials: MaterialDefaults

    @classmethod
    def from_env(cls) -> "RheoSettings":
        """从环境变量创建配置

        Returns:
            从环境变量加载的 RheoSettings 实例
        """
        # 查找.env文件的可能位置
        env_paths = [
            os.path.join(_CURRENT_DIR, ".env"),                  # src/rheoformer/.env
            os.path.join(_CURRENT_DIR, "..", "..", ".env"),      # 仓库根目录
            ".env",                                              # 当前目录
        ]
        for env_path in env_paths:
            if os.path.exists(env_path):
                load_dotenv(env_path)
                logger.debug(f"✅ 加载环境变量文件: {env_path}")
                break
        else:
            logger.warning("⚠️ 未找到.env文件，使用系统环境变量")

        logging_config = LoggingConfig(
            level=os.getenv("RHEO_LOG_LEVEL", "INFO"),
            format=os.getenv("RHEO_LOG_FORMAT", _DEFAULT_LOG_FORMAT),
        )
        runtime_config = RuntimeConfig(
            seed=_parse_seed(os.getenv("RHEO_SEED")),
            output_dir=os.getenv("RHEO_OUTPUT_DIR", "runs"),
        )
        return cls(logging=logging_config, runtime=runtime_config, materials=MaterialDefaults())


def _parse_seed(raw: Optional[str]) -> int:
    """解析 RHEO_SEED，非法值回退为 0 并给出警告"""
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"⚠️ RHEO_SEED 不是整数: {raw!r}，使用默认种子 0")
        return 0


def get_settings() -> RheoSettings:
    """获取全局配置实例

    Returns:
        从环境变量加载的 RheoSettings 实例
    """
    return RheoSettings.from_env()
