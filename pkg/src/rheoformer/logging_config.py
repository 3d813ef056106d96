# Copyright (c) 2025 左岚. All rights reserved.
"""RheOFormer 日志配置模块

本模块提供集中化的日志配置，支持控制台日志输出和颜色区分。
"""

import logging
import os
import sys

from .config import LoggingConfig


class ColoredFormatter(logging.Formatter):
    """带颜色的日志格式化器"""

    # ANSI颜色代码
    COLORS = {
        'DEBUG': '\033[36m',      # 青色
        'INFO': '\033[32m',       # 绿色
        'WARNING': '\033[33m',    # 黄色
        'ERROR': '\033[31m',      # 红色
        'CRITICAL': '\033[35m',   # 紫色
    }

    # 模块特定颜色
    MODULE_COLORS = {
        'workflow': '\033[94m',        # 蓝色 - 工作流节点
        'training': '\033[96m',        # 亮青色 - 训练
        'constitutive': '\033[92m',    # 亮绿色 - 本构积分
        'flow1d': '\033[93m',          # 亮黄色 - 通道流求解
        'tensor': '\033[95m',          # 亮紫色 - 自动微分
        'cli': '\033[91m',             # 亮红色 - 命令行
    }

    RESET = '\033[0m'  # 重置颜色

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # 检查是否支持颜色输出
        self.use_colors = (
            hasattr(sys.stdout, 'isatty') and sys.stdout.isatty() and
            os.getenv('NO_COLOR') is None and
            os.getenv('TERM') != 'dumb'
        )

    def format(self, record):
        log_message = super().format(record)
        if not self.use_colors:
            return log_message

        # 模块颜色优先于级别颜色，但警告以上总是按级别着色
        color = self.COLORS.get(record.levelname, '')
        if record.levelno < logging.WARNING:
            for module, module_color in self.MODULE_COLORS.items():
                if module in record.name:
                    color = module_color
                    break

        if color:
            return f"{color}{log_message}{self.RESET}"
        return log_message


def setup_logging(config: LoggingConfig) -> None:
    """设置日志配置

    Args:
        config: 日志配置
    """
    level = getattr(logging, config.level.upper(), logging.INFO)
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # 清除现有处理器
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    formatter = ColoredFormatter(fmt=config.format, datefmt='%Y-%m-%d %H:%M:%S')
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # 第三方库只保留警告
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('langgraph').setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.debug(f"🎨 日志配置完成 - 级别: {config.level} | 颜色支持: {'✅' if formatter.use_colors else '❌'}")


def get_stage_logger(stage_name: str) -> logging.Logger:
    """获取工作流阶段专用日志记录器

    Args:
        stage_name: 阶段名称

    Returns:
        配置好的日志记录器
    """
    return logging.getLogger(f"rheoformer.workflow.{stage_name}")


def log_stage_start(logger: logging.Logger, stage_name: str, description: str = "") -> None:
    """记录阶段开始执行"""
    desc_text = f" - {description}" if description else ""
    logger.info(f"🚀 开始执行 {stage_name} 阶段{desc_text}")


def log_stage_complete(logger: logging.Logger, stage_name: str, result: str = "") -> None:
    """记录阶段完成执行"""
    result_text = f" - {result}" if result else ""
    logger.info(f"✅ {stage_name} 阶段执行完成{result_text}")


def log_stage_error(logger: logging.Logger, stage_name: str, error: str) -> None:
    """记录阶段执行错误"""
    logger.error(f"❌ {stage_name} 阶段执行失败: {error}")
