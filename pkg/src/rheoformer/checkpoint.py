# Copyright (c) 2025 左岚. All rights reserved.
"""检查点存取模块

文件布局:

    b"RHEOCKPT1" | u64 小端头部长度 | UTF-8 JSON 头部 | 按名称排序的小端 float64 数组

头部包含完整的 ModelConfig、TrainConfig、归一化通道名、种子、元数据、
可选的训练续跑状态，以及每个数组的名称和形状。JSON 键排序、数组按名称排序，
因此载入后再保存得到逐字节相同的文件。
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .dataset_io import atomic_write_bytes
from .model import ModelConfig, RheOFormer
from .optim import AdamState, Normalizer, TrainConfig
from .rheo_types import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"RHEOCKPT1"
_LENGTH = struct.Struct("<Q")
_F8 = np.dtype("<f8")


@dataclass
class TrainingState:
    """续跑所需的训练状态（已完成的轮数、当前权重、Adam 矩、最佳验证记录）"""

    epoch: int
    weights: Dict[str, np.ndarray]
    adam: AdamState
    history: List[Dict[str, Any]]
    best_val: float
    best_epoch: int
    best_weights: Dict[str, np.ndarray]


@dataclass
class Checkpoint:
    """模型配置、训练配置、归一化统计量与命名权重"""

    model_config: ModelConfig
    train_config: TrainConfig
    normalizer: Normalizer
    weights: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    training_state: Optional[TrainingState] = None

    @property
    def seed(self) -> int:
        return self.train_config.seed

    def build_model(self) -> RheOFormer:
        model = RheOFormer(self.model_config)
        model.load_state_dict(self.weights)
        return model


def _named_arrays(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    arrays = {f"weights/{k}": v for k, v in ckpt.weights.items()}
    arrays.update({f"normalizer/{k}": v for k, v in ckpt.normalizer.arrays().items()})
    state = ckpt.training_state
    if state is not None:
        arrays.update({f"train/weights/{k}": v for k, v in state.weights.items()})
        arrays.update({f"train/best/{k}": v for k, v in state.best_weights.items()})
        arrays.update({f"train/adam_m/{k}": v for k, v in state.adam.m.items()})
        arrays.update({f"train/adam_v/{k}": v for k, v in state.adam.v.items()})
    return arrays


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    arrays = _named_arrays(ckpt)
    names = sorted(arrays)
    state = ckpt.training_state
    header = {
        "format": MAGIC.decode("ascii"),
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "normalizer_channels": list(ckpt.normalizer.channels),
        "seed": ckpt.seed,
        "metadata": ckpt.metadata,
        "training_state": None if state is None else {
            "epoch": state.epoch,
            "step": state.adam.step,
            "skipped": state.adam.skipped,
            "history": state.history,
            "best_val": state.best_val,
            "best_epoch": state.best_epoch,
        },
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype=_F8).tobytes() for n in names)
    return MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + payload


def _split(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"检查点魔数不匹配: {raw[:len(MAGIC)]!r}")
    offset = len(MAGIC) + _LENGTH.size
    if len(raw) < offset:
        raise CheckpointFormatError("检查点在头部长度字段处截断")
    (header_len,) = _LENGTH.unpack_from(raw, len(MAGIC))
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
        specs: List[Tuple[str, Tuple[int, ...]]] = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"检查点头部无法解析: {e}") from e

    names = [n for n, _ in specs]
    if len(set(names)) != len(names):
        raise CheckpointFormatError("检查点中存在重名数组")
    payload = raw[offset + header_len:]
    counts = [int(np.prod(shape)) for _, shape in specs]
    if len(payload) != sum(counts) * _F8.itemsize:
        raise CheckpointFormatError(f"检查点负载 {len(payload)} 字节与声明的数组尺寸不符")
    flat = np.frombuffer(payload, dtype=_F8).astype(np.float64)
    arrays, start = {}, 0
    for (name, shape), count in zip(specs, counts):
        arrays[name] = flat[start:start + count].reshape(shape).copy()
        start += count

    try:
        model_config = ModelConfig.from_dict(header["model_config"])
        train_config = TrainConfig.from_dict(header["train_config"])
        normalizer = Normalizer.from_arrays(header["normalizer_channels"], _split(arrays, "normalizer/"))
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError(f"检查点缺少字段: {e}") from e

    state = None
    raw_state = header.get("training_state")
    if raw_state is not None:
        state = TrainingState(
            epoch=raw_state["epoch"],
            weights=_split(arrays, "train/weights/"),
            adam=AdamState(step=raw_state["step"], m=_split(arrays, "train/adam_m/"),
                           v=_split(arrays, "train/adam_v/"), skipped=raw_state["skipped"]),
            history=raw_state["history"],
            best_val=raw_state["best_val"],
            best_epoch=raw_state["best_epoch"],
            best_weights=_split(arrays, "train/best/"),
        )
    return Checkpoint(model_config, train_config, normalizer, _split(arrays, "weights/"),
                      dict(header.get("metadata", {})), state)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info(f"💾 检查点已写入 {path} ({len(ckpt.weights)} 个权重数组)")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as handle:
        return decode_checkpoint(handle.read())
