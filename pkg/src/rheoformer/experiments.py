# Copyright (c) 2025 左岚. All rights reserved.
"""实验步骤模块

命令行子命令与工作流节点共用的文件级操作：生成数据、训练、预测、评估、绘图。
每个函数读写磁盘文件并返回写出的路径或结果摘要。
"""

import json
import logging
import os
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import MaterialDefaults
from .dataset_io import FieldDataset, atomic_write_text, read_dataset, write_dataset
from .flow1d import DEFAULT_SNAPSHOTS, ChannelConfig, build_flow_dataset
from .generators import RheometricConfig, build_rheometric_dataset
from .model import ModelConfig, RheOFormer
from .optim import TrainConfig
from .plotting import plot_dataset, plot_error
from .rheo_types import ConfigurationError, ConstitutiveKind, Protocol
from .training import (
    EvalReport,
    FitResult,
    evaluate_checkpoint,
    fit,
    model_config_for,
    predict_dataset,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.rheockpt"
HISTORY_NAME = "loss_history.csv"


def material_params(kind: ConstitutiveKind, materials: Optional[MaterialDefaults] = None):
    materials = materials or MaterialDefaults()
    return {
        ConstitutiveKind.TEVP: materials.tevp,
        ConstitutiveKind.GIESEKUS: materials.giesekus,
        ConstitutiveKind.OLDROYDB: materials.oldroydb,
    }[ConstitutiveKind(kind)]


def generate_rheometric(kind: str, protocol: str, n_samples: int, seed: int, out: str,
                        materials: Optional[MaterialDefaults] = None,
                        cfg: Optional[RheometricConfig] = None) -> str:
    kind_enum = ConstitutiveKind(kind)
    dataset = build_rheometric_dataset(kind_enum, Protocol(protocol), n_samples, seed,
                                       material_params(kind_enum, materials), cfg)
    write_dataset(out, dataset)
    return out


def dpdx_sweep(n_samples: int, dpdx_min: float, dpdx_max: float) -> np.ndarray:
    if n_samples < 1:
        raise ConfigurationError(f"样本数必须为正, 实际 {n_samples}")
    if dpdx_min > dpdx_max:
        raise ConfigurationError(f"dpdx_min={dpdx_min} 大于 dpdx_max={dpdx_max}")
    return np.linspace(dpdx_min, dpdx_max, n_samples)


def generate_flow(n_samples: int, dpdx_min: float, dpdx_max: float, out: str,
                  base: Optional[ChannelConfig] = None, snapshots: int = DEFAULT_SNAPSHOTS) -> str:
    base = base or ChannelConfig()
    dataset = build_flow_dataset(base, dpdx_sweep(n_samples, dpdx_min, dpdx_max), snapshots)
    write_dataset(out, dataset)
    return out


def load_run_config(path: Optional[str]) -> Dict[str, Any]:
    """读取 JSON 训练配置 {"model": {...}, "train": {...}}"""
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"配置文件 {path} 不是合法 JSON: {e}") from e
    ignored = sorted(set(data) - {"model", "train"})
    if ignored:
        logger.warning(f"⚠️ 训练配置忽略未知段: {ignored}")
    return data


def write_history(path: str, history: Sequence[Dict[str, Any]]) -> None:
    lines = ["epoch,train_loss,val_loss,skipped"]
    lines += [f"{h['epoch']},{h['train_loss']!r},{h['val_loss']!r},{h['skipped']}" for h in history]
    atomic_write_text(path, "\n".join(lines) + "\n")


def train_model(dataset: FieldDataset, run_config: Dict[str, Any], seed: Optional[int] = None) -> FitResult:
    train_config = TrainConfig.from_dict(run_config.get("train", {}))
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    model_section = dict(run_config.get("model", {}))
    derived = {"in_channels", "out_channels", "coord_dim"}
    overrides = {k: v for k, v in model_section.items() if k in ModelConfig.__dataclass_fields__ and k not in derived}
    ignored = sorted(set(model_section) - set(overrides))
    if ignored:
        logger.warning(f"⚠️ 模型配置忽略字段（未知或由数据集决定）: {ignored}")
    overrides.setdefault("seed", train_config.seed)
    model = RheOFormer(model_config_for(dataset, train_config.condition_steps, **overrides))
    return fit(model, dataset, train_config)


def train_from_file(data: str, config_path: Optional[str], out_dir: str,
                    seed: Optional[int] = None) -> Tuple[str, str]:
    result = train_model(read_dataset(data), load_run_config(config_path), seed)
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    history_path = os.path.join(out_dir, HISTORY_NAME)
    save_checkpoint(ckpt_path, result.checkpoint)
    write_history(history_path, result.history)
    return ckpt_path, history_path


def predict_to_file(checkpoint: str, data: str, condition_steps: Optional[int], out: str) -> str:
    ckpt = load_checkpoint(checkpoint)
    k = condition_steps if condition_steps is not None else ckpt.metadata.get("condition_steps", 0)
    write_dataset(out, predict_dataset(ckpt.build_model(), ckpt.normalizer, read_dataset(data), k))
    return out


def error_fields_path(report_path: str) -> str:
    stem, _ = os.path.splitext(report_path)
    return f"{stem}.errors.rheo"


def write_report(report: EvalReport, dataset: FieldDataset, report_path: str) -> Dict[str, Any]:
    """报告写为 JSON，逐点误差场写为同格式数据集"""
    errors_path = error_fields_path(report_path)
    write_dataset(errors_path, report.error_dataset(dataset.coords, dataset.dt))
    payload = report.to_dict()
    payload["error_fields_path"] = os.path.basename(errors_path)
    atomic_write_text(report_path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    logger.info(f"📝 评估报告已写入 {report_path}")
    return payload


def eval_to_file(checkpoint: str, data: str, condition_steps: Optional[int], report_path: str,
                 indices: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    ckpt = load_checkpoint(checkpoint)
    dataset = read_dataset(data)
    if indices:
        dataset = dataset.subset(indices)
    report = evaluate_checkpoint(ckpt, dataset, condition_steps)
    return write_report(report, dataset, report_path)


def plot_to_dir(out_dir: str, what: str, data: Optional[str] = None, report: Optional[str] = None,
                prediction: Optional[str] = None, sample: int = 0) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    if what == "error":
        if not report:
            raise ConfigurationError("--what error 需要 --report")
        with open(report, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        written = plot_error(payload, out_dir)
        errors = os.path.join(os.path.dirname(os.path.abspath(report)), payload.get("error_fields_path", ""))
        if payload.get("error_fields_path") and os.path.exists(errors):
            written += plot_dataset(read_dataset(errors), out_dir, "heatmap", sample)
        return written
    if not data:
        raise ConfigurationError(f"--what {what} 需要 --data")
    dataset = read_dataset(data)
    if not 0 <= sample < len(dataset):
        raise ConfigurationError(f"样本序号 {sample} 超出范围 [0, {len(dataset)})")
    pred = read_dataset(prediction) if prediction else None
    return plot_dataset(dataset, out_dir, what, sample, pred)
