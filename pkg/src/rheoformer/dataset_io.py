# Copyright (c) 2025 左岚. All rights reserved.
"""数据集容器与文件格式模块

流变（0 维）数据与时空场数据共用一种自描述容器:

    b"RHEO1" | u64 小端头部长度 | UTF-8 JSON 头部 | 小端 float64 负载

负载依次为坐标 [n_points × coord_dim] 和每个样本的场 [n_steps × n_points × n_channels]。
流变数据以时间网格作坐标、n_steps = 1，输入与输出通道名记录在头部 attrs 中。
所有写入先写临时文件再原子重命名。
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .rheo_types import DatasetFormatError, DimensionError

logger = logging.getLogger(__name__)

MAGIC = b"RHEO1"
FORMAT_VERSION = 1
KIND_RHEOMETRIC = "rheometric"
KIND_FLOW = "flow"

_LENGTH = struct.Struct("<Q")
_F8 = np.dtype("<f8")
_REQUIRED_KEYS = ("n_samples", "n_points", "n_steps", "dt", "coord_dim", "channels")


# ========== 数据结构 ==========
@dataclass
class FieldSequence:
    """时空记录：点坐标、通道名和均匀时间步上的快照"""

    coords: np.ndarray
    channels: Tuple[str, ...]
    fields: np.ndarray
    dt: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        self.fields = np.asarray(self.fields, dtype=np.float64)
        self.channels = tuple(self.channels)
        if self.fields.ndim != 3:
            raise DimensionError(f"场数组应为 (n_steps, n_points, n_channels), 实际 {self.fields.shape}")
        if self.fields.shape[1] != self.coords.shape[0]:
            raise DimensionError(f"场点数与坐标不一致: {self.fields.shape} 与 {self.coords.shape}")
        if self.fields.shape[2] != len(self.channels):
            raise DimensionError(f"通道数不一致: {self.fields.shape} 与 {self.channels}")

    @property
    def n_steps(self) -> int:
        return self.fields.shape[0]

    @property
    def n_points(self) -> int:
        return self.fields.shape[1]

    @property
    def n_channels(self) -> int:
        return self.fields.shape[2]

    @property
    def coord_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps)

    def channel(self, name: str) -> np.ndarray:
        """单通道数据 (n_steps, n_points)"""
        return self.fields[:, :, self.channels.index(name)]


@dataclass
class TimeSeriesSample:
    """流变训练记录：时间网格上的变形率通道与应力通道"""

    times: np.ndarray
    inputs: Dict[str, np.ndarray]
    outputs: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_sequence(self) -> FieldSequence:
        times = np.asarray(self.times, dtype=np.float64)
        columns = [np.asarray(v, dtype=np.float64) for v in list(self.inputs.values()) + list(self.outputs.values())]
        for column in columns:
            if column.shape != times.shape:
                raise DimensionError(f"通道长度 {column.shape} 与时间网格 {times.shape} 不一致")
        fields = np.stack(columns, axis=1)[None, :, :]
        channels = tuple(self.inputs) + tuple(self.outputs)
        return FieldSequence(times[:, None], channels, fields, float(times[1] - times[0]), dict(self.metadata))

    @classmethod
    def from_sequence(cls, sequence: FieldSequence, input_channels: Sequence[str],
                      output_channels: Sequence[str]) -> "TimeSeriesSample":
        snapshot = sequence.fields[0]
        pick = lambda names: {n: snapshot[:, sequence.channels.index(n)].copy() for n in names}  # noqa: E731
        return cls(sequence.coords[:, 0].copy(), pick(input_channels), pick(output_channels), dict(sequence.metadata))


@dataclass
class FieldDataset:
    """共享坐标、通道和时间步的一组样本"""

    sequences: List[FieldSequence]
    units: Dict[str, str] = field(default_factory=dict)
    attrs: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.sequences:
            raise DatasetFormatError("数据集至少需要一个样本", code=DatasetFormatError.SCHEMA)
        first = self.sequences[0]
        if len(set(first.channels)) != len(first.channels):
            raise DatasetFormatError(f"通道名重复: {first.channels}", code=DatasetFormatError.DUPLICATE_CHANNEL)
        if not first.dt > 0:
            raise DatasetFormatError(f"dt 必须为正, 实际 {first.dt}", code=DatasetFormatError.HEADER)
        for index, seq in enumerate(self.sequences[1:], start=1):
            if seq.channels != first.channels or seq.fields.shape != first.fields.shape:
                raise DatasetFormatError(
                    f"样本 {index} 的形状/通道 {seq.fields.shape} {seq.channels} 与首个样本不一致",
                    code=DatasetFormatError.SCHEMA,
                )
            if seq.dt != first.dt or not np.array_equal(seq.coords, first.coords):
                raise DatasetFormatError(f"样本 {index} 的时间步或坐标与首个样本不一致", code=DatasetFormatError.SCHEMA)
        for name in self.input_channels + self.output_channels:
            if name not in first.channels:
                raise DatasetFormatError(f"attrs 引用了不存在的通道 {name}", code=DatasetFormatError.SCHEMA)

    @classmethod
    def from_samples(cls, samples: Sequence[TimeSeriesSample], units: Optional[Dict[str, str]] = None,
                     attrs: Optional[Dict[str, Any]] = None) -> "FieldDataset":
        attrs = dict(attrs or {})
        attrs.update(kind=KIND_RHEOMETRIC, input_channels=list(samples[0].inputs),
                     output_channels=list(samples[0].outputs))
        return cls([s.to_sequence() for s in samples], dict(units or {}), attrs)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def coords(self) -> np.ndarray:
        return self.sequences[0].coords

    @property
    def channels(self) -> Tuple[str, ...]:
        return self.sequences[0].channels

    @property
    def dt(self) -> float:
        return self.sequences[0].dt

    @property
    def n_steps(self) -> int:
        return self.sequences[0].n_steps

    @property
    def n_points(self) -> int:
        return self.sequences[0].n_points

    @property
    def kind(self) -> str:
        return self.attrs.get("kind", KIND_FLOW)

    @property
    def input_channels(self) -> List[str]:
        return list(self.attrs.get("input_channels", self.channels))

    @property
    def output_channels(self) -> List[str]:
        return list(self.attrs.get("output_channels", self.channels))

    def channel_indices(self, names: Sequence[str]) -> List[int]:
        return [self.channels.index(n) for n in names]

    def stacked(self) -> np.ndarray:
        """全部样本的场 (n_samples, n_steps, n_points, n_channels)"""
        return np.stack([s.fields for s in self.sequences])

    def metadata_column(self, key: str) -> List[Any]:
        return [s.metadata.get(key) for s in self.sequences]

    def subset(self, indices: Sequence[int]) -> "FieldDataset":
        return FieldDataset([self.sequences[i] for i in indices], dict(self.units), dict(self.attrs))

    def samples(self) -> List[TimeSeriesSample]:
        return [TimeSeriesSample.from_sequence(s, self.input_channels, self.output_channels) for s in self.sequences]


# ========== 文件读写 ==========
def atomic_write_bytes(path: str, payload: bytes) -> None:
    """写临时文件后重命名，读者不会看到半个文件"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _header(dataset: FieldDataset) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "n_samples": len(dataset),
        "n_points": dataset.n_points,
        "n_steps": dataset.n_steps,
        "dt": dataset.dt,
        "coord_dim": dataset.sequences[0].coord_dim,
        "channels": list(dataset.channels),
        "units": {name: dataset.units.get(name, "") for name in dataset.channels},
        "sample_metadata": [s.metadata for s in dataset.sequences],
        "attrs": dataset.attrs,
    }


def encode_dataset(dataset: FieldDataset) -> bytes:
    dataset.validate()
    header = json.dumps(_header(dataset), sort_keys=True, ensure_ascii=False).encode("utf-8")
    blocks = [np.ascontiguousarray(dataset.coords, dtype=_F8).tobytes()]
    blocks.extend(np.ascontiguousarray(s.fields, dtype=_F8).tobytes() for s in dataset.sequences)
    return MAGIC + _LENGTH.pack(len(header)) + header + b"".join(blocks)


def decode_dataset(raw: bytes) -> FieldDataset:
    if raw[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"文件魔数不匹配: {raw[:len(MAGIC)]!r}", code=DatasetFormatError.MAGIC)
    offset = len(MAGIC) + _LENGTH.size
    if len(raw) < offset:
        raise DatasetFormatError("文件在头部长度字段处截断", code=DatasetFormatError.SIZE)
    (header_len,) = _LENGTH.unpack_from(raw, len(MAGIC))
    if len(raw) < offset + header_len:
        raise DatasetFormatError(f"头部声明 {header_len} 字节, 文件不足", code=DatasetFormatError.SIZE)
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"头部无法解析: {e}", code=DatasetFormatError.HEADER) from e
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise DatasetFormatError(f"头部缺少字段: {missing}", code=DatasetFormatError.HEADER)

    channels = list(header["channels"])
    if len(set(channels)) != len(channels):
        raise DatasetFormatError(f"通道名重复: {channels}", code=DatasetFormatError.DUPLICATE_CHANNEL)
    n_samples, n_points, n_steps = int(header["n_samples"]), int(header["n_points"]), int(header["n_steps"])
    coord_dim, dt = int(header["coord_dim"]), float(header["dt"])
    if not dt > 0:
        raise DatasetFormatError(f"dt 必须为正, 实际 {dt}", code=DatasetFormatError.HEADER)

    payload = raw[offset + header_len:]
    coord_count = n_points * coord_dim
    block = n_steps * n_points * len(channels)
    expected = (coord_count + n_samples * block) * _F8.itemsize
    if len(payload) != expected:
        raise DatasetFormatError(f"负载长度 {len(payload)} 字节, 头部声明 {expected} 字节", code=DatasetFormatError.SIZE)

    values = np.frombuffer(payload, dtype=_F8).astype(np.float64)
    coords = values[:coord_count].reshape(n_points, coord_dim)
    metadata = header.get("sample_metadata") or [{} for _ in range(n_samples)]
    sequences = []
    for index in range(n_samples):
        start = coord_count + index * block
        fields = values[start:start + block].reshape(n_steps, n_points, len(channels))
        sequences.append(FieldSequence(coords.copy(), tuple(channels), fields.copy(), dt, dict(metadata[index])))

    ignored = sorted(set(header) - set(_REQUIRED_KEYS) - {"format_version", "units", "sample_metadata", "attrs"})
    if ignored:
        logger.debug(f"数据集头部忽略未知字段: {ignored}")
    return FieldDataset(sequences, dict(header.get("units", {})), dict(header.get("attrs", {})))


def write_dataset(path: str, dataset: FieldDataset) -> None:
    atomic_write_bytes(path, encode_dataset(dataset))
    logger.info(f"💾 数据集已写入 {path} ({len(dataset)} 个样本, 通道 {list(dataset.channels)})")


def read_dataset(path: str) -> FieldDataset:
    with open(path, "rb") as handle:
        raw = handle.read()
    dataset = decode_dataset(raw)
    logger.debug(f"读取数据集 {path}: {len(dataset)} 个样本")
    return dataset


def export_planar_dataset(dataset: FieldDataset, n_stations: int = 4, length: float = 1.0) -> FieldDataset:
    """把通道流数据沿流向复制成二维点云

    输出通道为 (u_x, u_y, sigma_xx, sigma_yy, sigma_xy)，u_y 与 sigma_yy 恒为零，
    即外部二维 CFD 数据的接入格式。
    """
    if n_stations < 1:
        raise DatasetFormatError(f"站点数必须为正, 实际 {n_stations}", code=DatasetFormatError.SCHEMA)
    required = ("u_x", "sigma_xy", "sigma_xx")
    if any(name not in dataset.channels for name in required) or dataset.sequences[0].coord_dim != 1:
        raise DatasetFormatError(f"需要一维通道流数据, 实际通道 {dataset.channels}", code=DatasetFormatError.SCHEMA)
    y = dataset.coords[:, 0]
    xs = np.linspace(0.0, length, n_stations)
    coords = np.stack([np.repeat(xs, len(y)), np.tile(y, n_stations)], axis=1)
    channels = ("u_x", "u_y", "sigma_xx", "sigma_yy", "sigma_xy")
    sequences = []
    for seq in dataset.sequences:
        zeros = np.zeros((seq.n_steps, seq.n_points))
        columns = [seq.channel("u_x"), zeros, seq.channel("sigma_xx"), zeros, seq.channel("sigma_xy")]
        fields = np.tile(np.stack(columns, axis=2), (1, n_stations, 1))
        sequences.append(FieldSequence(coords, channels, fields, seq.dt, dict(seq.metadata)))
    units = {"u_x": "m/s", "u_y": "m/s", "sigma_xx": "Pa", "sigma_yy": "Pa", "sigma_xy": "Pa"}
    attrs = {"kind": KIND_FLOW, "source": "planar_export", "n_stations": n_stations}
    return FieldDataset(sequences, units, attrs)
