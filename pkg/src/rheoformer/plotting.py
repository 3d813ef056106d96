# Copyright (c) 2025 左岚. All rights reserved.
"""绘图模块

每张 SVG 图旁边写一个同名 CSV，内容为图中绘制的全部数值。
- series: 0 维时间序列折线图（可叠加预测）
- heatmap: 一维坐标的时空热图，二维坐标的逐快照散点图
- error: 评估报告中逐样本误差与 Wi 的关系
"""

import io
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset_io import KIND_RHEOMETRIC, FieldDataset, atomic_write_bytes, atomic_write_text  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "rheoformer"   # 固定 SVG 内部 id，输出可复现


def _write_csv(path: str, header: Sequence[str], rows: np.ndarray) -> None:
    buffer = io.StringIO()
    np.savetxt(buffer, np.atleast_2d(rows), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    atomic_write_text(path, buffer.getvalue())


def _write_svg(fig, path: str) -> None:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def _paired(stem: str) -> Dict[str, str]:
    return {"svg": f"{stem}.svg", "csv": f"{stem}.csv"}


def plot_series(dataset: FieldDataset, out_dir: str, sample: int = 0,
                prediction: Optional[FieldDataset] = None) -> List[str]:
    """0 维序列：每个通道随时间变化，预测用实线、真值用虚线"""
    seq = dataset.sequences[sample]
    times = seq.coords[:, 0]
    channels = list(seq.channels)
    columns, header = [times], ["t"]
    fig, axes = plt.subplots(len(channels), 1, figsize=(6, 2.2 * len(channels)), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], channels):
        truth = seq.channel(name)[0]
        ax.plot(times, truth, "k--", label="truth")
        columns.append(truth)
        header.append(name)
        if prediction is not None and name in dataset.output_channels:
            pred = prediction.sequences[sample].channel(name)[0]
            ax.plot(times, pred, "r-", label="prediction")
            columns.append(pred)
            header.append(f"pred_{name}")
        ax.set_ylabel(f"{name} [{dataset.units.get(name, '')}]")
    axes[0, 0].legend(loc="best")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()

    paths = _paired(os.path.join(out_dir, f"series_{sample}"))
    _write_svg(fig, paths["svg"])
    _write_csv(paths["csv"], header, np.stack(columns, axis=1))
    return [paths["svg"], paths["csv"]]


def plot_heatmap(dataset: FieldDataset, out_dir: str, sample: int = 0, step: Optional[int] = None) -> List[str]:
    """场数据热图：一维坐标画 (t, y) 时空图，二维坐标画第 step 个快照"""
    seq = dataset.sequences[sample]
    written = []
    for name in seq.channels:
        values = seq.channel(name)
        fig, ax = plt.subplots(figsize=(6, 4))
        stem = os.path.join(out_dir, f"heatmap_{sample}_{name}")
        if seq.coord_dim == 1:
            y = seq.coords[:, 0]
            image = ax.pcolormesh(seq.times, y, values.T, shading="nearest", cmap="viridis")
            ax.set_xlabel("t [s]")
            ax.set_ylabel("y")
            t_grid, y_grid = np.meshgrid(seq.times, y, indexing="ij")
            rows = np.stack([t_grid.ravel(), y_grid.ravel(), values.ravel()], axis=1)
            header = ["t", "y", name]
        else:
            index = seq.n_steps - 1 if step is None else step
            image = ax.scatter(seq.coords[:, 0], seq.coords[:, 1], c=values[index], s=12, cmap="viridis")
            ax.set_xlabel("x")
            ax.set_ylabel("y")
            ax.set_title(f"t = {seq.times[index]:.3g} s")
            rows = np.column_stack([seq.coords[:, 0], seq.coords[:, 1], values[index]])
            header = ["x", "y", name]
            stem = f"{stem}_step{index}"
        fig.colorbar(image, ax=ax, label=f"{name} [{dataset.units.get(name, '')}]")
        fig.tight_layout()
        paths = _paired(stem)
        _write_svg(fig, paths["svg"])
        _write_csv(paths["csv"], header, rows)
        written.extend([paths["svg"], paths["csv"]])
    return written


def plot_error(report: Dict[str, Any], out_dir: str) -> List[str]:
    """逐样本平均相对 L2 随 Wi（缺失时随样本序号）的变化"""
    per_sample = report["per_sample_l2"]
    wi = report.get("wi") or [None] * len(per_sample)
    use_wi = all(w is not None for w in wi)
    x = np.array(wi if use_wi else range(len(per_sample)), dtype=np.float64)
    channels = report["channels"]
    errors = np.array([[s[c] for c in channels] for s in per_sample], dtype=np.float64).reshape(len(x), len(channels))
    order = np.argsort(x, kind="stable")

    fig, ax = plt.subplots(figsize=(6, 4))
    for k, name in enumerate(channels):
        ax.plot(x[order], errors[order, k], "o-", label=name)
    ax.axhline(0.25, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("Wi" if use_wi else "sample")
    ax.set_ylabel("relative L2")
    ax.legend(loc="best")
    fig.tight_layout()

    paths = _paired(os.path.join(out_dir, "error"))
    _write_svg(fig, paths["svg"])
    _write_csv(paths["csv"], ["Wi" if use_wi else "sample"] + list(channels),
               np.column_stack([x[order], errors[order]]))
    return [paths["svg"], paths["csv"]]


def plot_dataset(dataset: FieldDataset, out_dir: str, what: str, sample: int = 0,
                 prediction: Optional[FieldDataset] = None) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    if what == "series" or (what == "heatmap" and dataset.kind == KIND_RHEOMETRIC):
        return plot_series(dataset, out_dir, sample, prediction)
    return plot_heatmap(dataset, out_dir, sample)
