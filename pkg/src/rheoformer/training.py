# Copyright (c) 2025 左岚. All rights reserved.
"""训练与评估模块

本模块把数据集样本转换为网络输入与目标，定义相对 L2 损失与局部相对误差，
并实现确定性的小批量训练循环（最佳验证检查点、断点续跑）和评估报告。

两类任务共用一条训练路径:

- 流变（0 维）: 以时间为坐标，输入通道 → 输出通道，一次编码/解码
- 时空（通道流等）: 以前 k 个快照为条件，潜空间推进预测其余全部快照
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, TrainingState
from .dataset_io import KIND_FLOW, KIND_RHEOMETRIC, FieldDataset, FieldSequence
from .model import ModelConfig, RheOFormer, propagator_jacobian_norm, stack_snapshots
from .optim import AdamState, Normalizer, TrainConfig, adam_step, assign_weights, grads_of, weights_of
from .rheo_types import ConfigurationError, DatasetFormatError, DivergenceError
from .tensor import Tensor

logger = logging.getLogger(__name__)

LOCAL_ERROR_CEILING = 0.25
NEAR_ZERO_FRACTION = 1e-8
_SQRT_FLOOR = 1e-24


# ========== 误差度量 ==========
def _channel_matrix(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim <= 1 else values.reshape(-1, values.shape[-1])


def relative_l2_per_channel(pred: np.ndarray, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """逐通道 ‖pred−truth‖₂/‖truth‖₂；末轴为通道，一维输入视为单通道

    Returns:
        (逐通道误差, 退化为绝对 L2 的通道标记)
    """
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DatasetFormatError(f"预测 {pred.shape} 与真值 {truth.shape} 形状不一致", code=DatasetFormatError.SCHEMA)
    p, t = _channel_matrix(pred), _channel_matrix(truth)
    diff = np.linalg.norm(p - t, axis=0)
    norm = np.linalg.norm(t, axis=0)
    fallback = norm == 0
    if np.any(fallback):
        logger.warning(f"⚠️ {int(fallback.sum())} 个通道真值范数为零，改用绝对 L2")
    return np.where(fallback, diff, diff / np.where(fallback, 1.0, norm)), fallback


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """逐通道相对 L2 的平均值"""
    errors, _ = relative_l2_per_channel(pred, truth)
    return float(errors.mean())


def relative_l2_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    """可微的逐通道相对 L2 平均，pred 为 m×C 张量"""
    truth = np.asarray(truth, dtype=np.float64)
    norms = np.linalg.norm(truth, axis=0)
    norms = np.where(norms == 0, 1.0, norms)
    per_channel = T.sqrt(T.sum(T.square(pred - truth), axis=0) + _SQRT_FLOOR)
    return T.mean(per_channel / norms)


@dataclass
class LocalErrorMap:
    """逐点 |truth−pred|/|truth|；近零真值处只记绝对误差"""

    relative: np.ndarray
    absolute: np.ndarray
    masked: np.ndarray

    def fraction_below(self, ceiling: float = LOCAL_ERROR_CEILING) -> float:
        kept = self.relative[~self.masked]
        return float(np.mean(kept < ceiling)) if kept.size else float("nan")

    def percentile(self, q: float) -> float:
        kept = self.relative[~self.masked]
        return float(np.percentile(kept, q)) if kept.size else float("nan")


def local_relative_error(pred: np.ndarray, truth: np.ndarray, eps_rel: float = NEAR_ZERO_FRACTION) -> LocalErrorMap:
    """逐点相对误差；|truth| 小于 eps_rel·max|truth|（逐通道）的点被屏蔽"""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DatasetFormatError(f"预测 {pred.shape} 与真值 {truth.shape} 形状不一致", code=DatasetFormatError.SCHEMA)
    absolute = np.abs(truth - pred)
    magnitude = np.abs(truth)
    if truth.ndim >= 2:
        scale = magnitude.reshape(-1, truth.shape[-1]).max(axis=0)
    else:
        scale = magnitude.max() if magnitude.size else 0.0
    masked = (magnitude < eps_rel * scale) | (magnitude == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(masked, np.nan, absolute / np.where(masked, 1.0, magnitude))
    return LocalErrorMap(relative=relative, absolute=absolute, masked=masked)


# ========== 任务布局 ==========
@dataclass
class TaskLayout:
    """数据集到网络输入/输出的映射方式"""

    kind: str
    input_channels: List[str]
    output_channels: List[str]
    condition_steps: int
    n_future: int
    coord_dim: int

    @classmethod
    def for_dataset(cls, dataset: FieldDataset, condition_steps: int) -> "TaskLayout":
        coord_dim = dataset.sequences[0].coord_dim
        if dataset.kind == KIND_RHEOMETRIC:
            return cls(KIND_RHEOMETRIC, dataset.input_channels, dataset.output_channels, 0, 0, coord_dim)
        if condition_steps < 1 or condition_steps >= dataset.n_steps:
            raise ConfigurationError(
                f"条件快照数 k={condition_steps} 需满足 1 ≤ k < n_steps={dataset.n_steps}")
        channels = list(dataset.channels)
        return cls(KIND_FLOW, channels, channels, condition_steps, dataset.n_steps - condition_steps, coord_dim)

    @property
    def in_features(self) -> int:
        if self.kind == KIND_RHEOMETRIC:
            return len(self.input_channels)
        return self.condition_steps * len(self.input_channels)

    @property
    def n_predicted_steps(self) -> int:
        return 1 if self.kind == KIND_RHEOMETRIC else self.n_future

    def check_model(self, config: ModelConfig) -> None:
        expected = (self.in_features, len(self.output_channels), self.coord_dim)
        actual = (config.in_channels, config.out_channels, config.coord_dim)
        if expected != actual:
            raise DatasetFormatError(
                f"数据集要求 (in, out, coord_dim)={expected}, 模型为 {actual}", code=DatasetFormatError.SCHEMA)

    def model_inputs(self, normalizer: Normalizer, seq: FieldSequence) -> Tuple[np.ndarray, np.ndarray]:
        coords = normalizer.scale_coords(seq.coords)
        if self.kind == KIND_RHEOMETRIC:
            idx = [seq.channels.index(n) for n in self.input_channels]
            return normalizer.normalize(seq.fields[0][:, idx], self.input_channels), coords
        snapshots = [normalizer.normalize(seq.fields[t], self.input_channels) for t in range(self.condition_steps)]
        return stack_snapshots(snapshots), coords

    def targets(self, normalizer: Normalizer, seq: FieldSequence) -> List[np.ndarray]:
        """归一化后的目标，每个预测步一个 m×C 数组"""
        idx = [seq.channels.index(n) for n in self.output_channels]
        if self.kind == KIND_RHEOMETRIC:
            return [normalizer.normalize(seq.fields[0][:, idx], self.output_channels)]
        return [normalizer.normalize(seq.fields[t][:, idx], self.output_channels)
                for t in range(self.condition_steps, seq.n_steps)]

    def predict_tensors(self, model: RheOFormer, values: np.ndarray, coords: np.ndarray,
                        query: np.ndarray) -> List[Tensor]:
        if self.kind == KIND_RHEOMETRIC:
            return [model.forward_static(values, coords, query)]
        return list(model.iter_rollout(values, coords, query, self.n_future))


def model_config_for(dataset: FieldDataset, condition_steps: int = 10, **overrides: Any) -> ModelConfig:
    """按数据集通道与条件快照数确定输入/输出宽度"""
    layout = TaskLayout.for_dataset(dataset, condition_steps)
    return ModelConfig(in_channels=layout.in_features, out_channels=len(layout.output_channels),
                       coord_dim=layout.coord_dim, **overrides)


def sample_loss(model: RheOFormer, layout: TaskLayout, normalizer: Normalizer, seq: FieldSequence,
                reduction: str = "mean") -> Tensor:
    """单个样本在全部预测步上的相对 L2 损失"""
    values, coords = layout.model_inputs(normalizer, seq)
    preds = layout.predict_tensors(model, values, coords, coords)
    losses = [relative_l2_loss(p, t) for p, t in zip(preds, layout.targets(normalizer, seq))]
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total / float(len(losses)) if reduction == "mean" else total


def dataset_loss(model: RheOFormer, layout: TaskLayout, normalizer: Normalizer, dataset: FieldDataset,
                 indices: Sequence[int], reduction: str = "mean") -> float:
    if not len(indices):
        return float("nan")
    with T.no_grad():
        return float(np.mean([sample_loss(model, layout, normalizer, dataset.sequences[i], reduction).item()
                              for i in indices]))


# ========== 数据划分 ==========
@dataclass
class DataSplit:
    """按样本划分；流动数据按 |dpdx| 排序后分层"""

    train: List[int]
    val: List[int]
    test: List[int]

    def to_dict(self) -> Dict[str, List[int]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _condition_keys(dataset: FieldDataset) -> List[float]:
    values = dataset.metadata_column("dpdx")
    if all(v is not None for v in values):
        return [abs(float(v)) for v in values]
    return [float(i) for i in range(len(dataset))]


def _evenly(pool: List[int], count: int) -> List[int]:
    """在 pool 内部（避开两端）均匀挑选 count 个元素"""
    if count <= 0 or len(pool) < 3:
        return []
    positions = np.unique(np.round(np.linspace(1, len(pool) - 2, count)).astype(int))
    return [pool[p] for p in positions]


def split_indices(dataset: FieldDataset, config: TrainConfig) -> DataSplit:
    """80/10/10 分层划分

    测试集一半取条件值最大的一端（外推），一半穿插在内部（内插）；
    验证集穿插在剩余样本内部。样本少于 5 个时全部用于训练，验证集与训练集相同。
    """
    n = len(dataset)
    if n < 5:
        everything = list(range(n))
        return DataSplit(everything, list(everything), [])
    order = [int(i) for i in np.argsort(_condition_keys(dataset), kind="stable")]
    test_fraction = max(0.0, 1.0 - config.train_fraction - config.val_fraction)
    n_test = max(1, int(round(n * test_fraction))) if test_fraction > 0 else 0
    n_val = max(1, int(round(n * config.val_fraction))) if config.val_fraction > 0 else 0

    n_extrapolate = int(math.ceil(n_test / 2))
    extrapolate = order[n - n_extrapolate:] if n_extrapolate else []
    interior = order[:n - n_extrapolate]
    interpolate = _evenly(interior, n_test - n_extrapolate)
    remaining = [i for i in interior if i not in interpolate]
    val = _evenly(remaining, n_val)
    train = [i for i in remaining if i not in val]
    if not val:
        val = list(train)
    return DataSplit(sorted(train), sorted(val), sorted(extrapolate + interpolate))


# ========== 训练 ==========
@dataclass
class FitResult:
    """训练输出：最佳验证检查点与逐轮损失"""

    checkpoint: Checkpoint
    history: List[Dict[str, Any]]
    split: DataSplit


def _batches(order: np.ndarray, size: int) -> List[np.ndarray]:
    return [order[i:i + size] for i in range(0, len(order), size)]


def fit(
    model: RheOFormer,
    dataset: FieldDataset,
    config: TrainConfig,
    resume: Optional[TrainingState] = None,
) -> FitResult:
    """小批量训练，返回最佳验证检查点

    第 e 轮的样本顺序由 default_rng([seed, e]) 决定，因此从任一轮的训练状态续跑
    与不中断训练逐位一致。训练结束后 model 持有最佳验证权重。

    Raises:
        DivergenceError: 损失出现非有限值（携带轮次）
    """
    config.validate()
    layout = TaskLayout.for_dataset(dataset, config.condition_steps)
    layout.check_model(model.config)
    split = split_indices(dataset, config)
    train_set = dataset.subset(split.train)
    normalizer = Normalizer.fit(train_set.stacked(), dataset.coords, dataset.channels)
    params = dict(model.named_parameters())
    names = sorted(params)

    if resume is not None:
        assign_weights(params, {k: v.copy() for k, v in resume.weights.items()}, names)
        adam = resume.adam.copy()
        history = [dict(h) for h in resume.history]
        best_val, best_epoch = resume.best_val, resume.best_epoch
        best_weights = {k: v.copy() for k, v in resume.best_weights.items()}
        start_epoch = resume.epoch + 1
        logger.info(f"🔁 从第 {resume.epoch} 轮续跑")
    else:
        adam = AdamState()
        train0 = dataset_loss(model, layout, normalizer, dataset, split.train, config.loss_reduction)
        val0 = dataset_loss(model, layout, normalizer, dataset, split.val, config.loss_reduction)
        history = [{"epoch": 0, "train_loss": train0, "val_loss": val0, "skipped": 0}]
        best_val, best_epoch, best_weights = val0, 0, weights_of(params)
        start_epoch = 1
        logger.info(f"🏁 初始损失 train={train0:.6f} val={val0:.6f} | 参数量 {model.num_parameters()}")

    for epoch in range(start_epoch, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        for batch in _batches(rng.permutation(np.asarray(split.train)), config.batch_size):
            model.zero_grad()
            for index in batch:
                loss = sample_loss(model, layout, normalizer, dataset.sequences[int(index)],
                                   config.loss_reduction) / float(len(batch))
                if not T.all_finite(loss):
                    raise DivergenceError("训练损失出现非有限值", epoch=epoch)
                loss.backward()
            new_weights, adam = adam_step(weights_of(params), grads_of(params), adam, config)
            assign_weights(params, new_weights, names)

        train_loss = dataset_loss(model, layout, normalizer, dataset, split.train, config.loss_reduction)
        val_loss = dataset_loss(model, layout, normalizer, dataset, split.val, config.loss_reduction)
        if not math.isfinite(train_loss):
            raise DivergenceError("训练损失出现非有限值", epoch=epoch)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "skipped": adam.skipped})
        logger.info(f"📉 epoch {epoch}/{config.epochs} train={train_loss:.6f} val={val_loss:.6f} "
                    f"skipped={adam.skipped}")
        if val_loss < best_val:
            best_val, best_epoch, best_weights = val_loss, epoch, weights_of(params)

    state = TrainingState(
        epoch=max(config.epochs, start_epoch - 1),
        weights=weights_of(params),
        adam=adam,
        history=history,
        best_val=best_val,
        best_epoch=best_epoch,
        best_weights=best_weights,
    )
    assign_weights(params, {k: v.copy() for k, v in best_weights.items()}, names)

    metadata = {
        "kind": layout.kind,
        "condition_steps": layout.condition_steps,
        "input_channels": layout.input_channels,
        "output_channels": layout.output_channels,
        "best_epoch": best_epoch,
        "best_val": best_val,
        "split": split.to_dict(),
        "train_condition_range": _condition_range(dataset, split.train),
        "jacobian_norm": _trained_jacobian_norm(model, layout, normalizer, dataset, split),
    }
    checkpoint = Checkpoint(model.config, config, normalizer, model.state_dict(), metadata, state)
    logger.info(f"🏆 最佳验证损失 {best_val:.6f} (epoch {best_epoch})")
    return FitResult(checkpoint=checkpoint, history=history, split=split)


def _condition_range(dataset: FieldDataset, indices: Sequence[int]) -> Optional[List[float]]:
    values = [dataset.sequences[i].metadata.get("dpdx") for i in indices]
    if not values or any(v is None for v in values):
        return None
    keys = [abs(float(v)) for v in values]
    return [min(keys), max(keys)]


def _trained_jacobian_norm(model: RheOFormer, layout: TaskLayout, normalizer: Normalizer,
                           dataset: FieldDataset, split: DataSplit) -> Optional[float]:
    """训练后在一个训练样本的 z₀ 上计算推进器雅可比范数（仅时空任务）"""
    if layout.kind != KIND_FLOW or not split.train:
        return None
    values, coords = layout.model_inputs(normalizer, dataset.sequences[split.train[0]])
    with T.no_grad():
        state = model.make_initial_latent(model.encode(values, coords), coords)
    norm = propagator_jacobian_norm(model, state)
    logger.info(f"🔬 推进器雅可比谱范数 {norm:.4f}")
    return norm


# ========== 推理与评估 ==========
def predict_arrays(model: RheOFormer, normalizer: Normalizer, dataset: FieldDataset,
                   condition_steps: int) -> np.ndarray:
    """物理单位的预测 (n_samples, n_predicted_steps, n_points, n_out)，只使用前 k 个快照"""
    layout = TaskLayout.for_dataset(dataset, condition_steps)
    layout.check_model(model.config)
    out = []
    with T.no_grad():
        for seq in dataset.sequences:
            values, coords = layout.model_inputs(normalizer, seq)
            steps = [p.data for p in layout.predict_tensors(model, values, coords, coords)]
            out.append(np.stack([normalizer.denormalize(s, layout.output_channels) for s in steps]))
    return np.stack(out)


def truth_arrays(dataset: FieldDataset, layout: TaskLayout) -> np.ndarray:
    idx = dataset.channel_indices(layout.output_channels)
    stacked = dataset.stacked()[..., idx]
    if layout.kind == KIND_RHEOMETRIC:
        return stacked[:, :1]
    return stacked[:, layout.condition_steps:]


def predict_dataset(model: RheOFormer, normalizer: Normalizer, dataset: FieldDataset,
                    condition_steps: int) -> FieldDataset:
    """把预测写成同格式数据集；流变数据保留输入通道，时空数据只含预测步"""
    layout = TaskLayout.for_dataset(dataset, condition_steps)
    preds = predict_arrays(model, normalizer, dataset, condition_steps)
    sequences = []
    for seq, pred in zip(dataset.sequences, preds):
        if layout.kind == KIND_RHEOMETRIC:
            fields = seq.fields.copy()
            fields[..., dataset.channel_indices(layout.output_channels)] = pred
            sequences.append(FieldSequence(seq.coords, seq.channels, fields, seq.dt, dict(seq.metadata)))
        else:
            sequences.append(FieldSequence(seq.coords, tuple(layout.output_channels), pred, seq.dt, dict(seq.metadata)))
    attrs = dict(dataset.attrs)
    attrs.update(prediction=True, condition_steps=layout.condition_steps)
    return FieldDataset(sequences, dict(dataset.units), attrs)


@dataclass
class EvalReport:
    """评估报告"""

    channels: List[str]
    condition_steps: int
    n_predicted_steps: int
    per_channel_l2: Dict[str, float]
    per_sample_l2: List[Dict[str, float]]
    local_error: LocalErrorMap
    wi: List[Optional[float]]
    conditions: List[Optional[float]]
    wall_time: float
    interpolation_l2: Optional[float] = None
    extrapolation_l2: Optional[float] = None
    kind: str = KIND_FLOW
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def fraction_below_ceiling(self) -> float:
        return self.local_error.fraction_below(LOCAL_ERROR_CEILING)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "channels": self.channels,
            "condition_steps": self.condition_steps,
            "n_predicted_steps": self.n_predicted_steps,
            "per_channel_l2": self.per_channel_l2,
            "per_sample_l2": self.per_sample_l2,
            "fraction_below_25pct": self.fraction_below_ceiling,
            "local_error_median": self.local_error.percentile(50),
            "local_error_p90": self.local_error.percentile(90),
            "masked_points": int(self.local_error.masked.sum()),
            "wi": self.wi,
            "conditions": self.conditions,
            "interpolation_l2": self.interpolation_l2,
            "extrapolation_l2": self.extrapolation_l2,
            "wall_time": self.wall_time,
            **self.extra,
        }

    def error_dataset(self, coords: np.ndarray, dt: float) -> FieldDataset:
        """逐点误差场：rel_err_<c>（屏蔽点为 NaN）与 abs_err_<c>"""
        channels = [f"rel_err_{c}" for c in self.channels] + [f"abs_err_{c}" for c in self.channels]
        sequences = []
        for i in range(self.local_error.relative.shape[0]):
            fields = np.concatenate([self.local_error.relative[i], self.local_error.absolute[i]], axis=-1)
            sequences.append(FieldSequence(coords, channels, fields, dt, {"Wi": self.wi[i]}))
        return FieldDataset(sequences, {}, {"kind": self.kind, "error_fields": True})


def evaluate(model: RheOFormer, normalizer: Normalizer, dataset: FieldDataset, condition_steps: int,
             train_range: Optional[Sequence[float]] = None) -> EvalReport:
    """以前 k 个快照为条件推进其余步并与真值比较

    train_range 为训练集 |dpdx| 范围，用于区分内插与外推误差。
    """
    start = time.perf_counter()
    layout = TaskLayout.for_dataset(dataset, condition_steps)
    preds = predict_arrays(model, normalizer, dataset, condition_steps)
    truth = truth_arrays(dataset, layout)
    channels = list(layout.output_channels)

    per_sample = []
    for p, t in zip(preds, truth):
        errors, _ = relative_l2_per_channel(p, t)
        per_sample.append({c: float(e) for c, e in zip(channels, errors)})
    per_channel = {c: float(np.mean([s[c] for s in per_sample])) for c in channels}

    conditions = dataset.metadata_column("dpdx")
    interpolation = extrapolation = None
    if train_range is not None and all(v is not None for v in conditions):
        lo, hi = train_range
        inside = [np.mean(list(s.values())) for s, c in zip(per_sample, conditions) if lo <= abs(c) <= hi]
        outside = [np.mean(list(s.values())) for s, c in zip(per_sample, conditions) if not lo <= abs(c) <= hi]
        interpolation = float(np.mean(inside)) if inside else None
        extrapolation = float(np.mean(outside)) if outside else None

    report = EvalReport(
        channels=channels,
        condition_steps=layout.condition_steps,
        n_predicted_steps=layout.n_predicted_steps,
        per_channel_l2=per_channel,
        per_sample_l2=per_sample,
        local_error=local_relative_error(preds, truth),
        wi=dataset.metadata_column("Wi"),
        conditions=conditions,
        wall_time=time.perf_counter() - start,
        interpolation_l2=interpolation,
        extrapolation_l2=extrapolation,
        kind=layout.kind,
    )
    logger.info(f"📊 评估完成: {per_channel} | 局部误差 <25% 比例 {report.fraction_below_ceiling:.3f}")
    return report


def evaluate_checkpoint(ckpt: Checkpoint, dataset: FieldDataset,
                        condition_steps: Optional[int] = None) -> EvalReport:
    k = condition_steps if condition_steps is not None else ckpt.metadata.get(
        "condition_steps", ckpt.train_config.condition_steps)
    return evaluate(ckpt.build_model(), ckpt.normalizer, dataset, k, ckpt.metadata.get("train_condition_range"))
