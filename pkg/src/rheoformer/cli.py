# Copyright (c) 2025 左岚. All rights reserved.
"""命令行入口

子命令: gen-rheometric, gen-flow1d, train, predict, eval, plot, pipeline

退出码: 0 成功；2 参数错误或 RheoFormerError；1 其他未预期错误。
所有子命令的种子查找顺序相同: --seed，其次环境变量 RHEO_SEED（默认 0）；
train 的 JSON 配置中的 train.seed 会被该种子覆盖。
"""

import argparse
import logging
import os
import sys
from typing import Callable, Dict, List, Optional

from . import experiments
from .config import RheoSettings, get_settings
from .logging_config import setup_logging
from .rheo_types import ConstitutiveKind, Protocol, RheoFormerError
from .workflow import FLOW_MODEL, run_pipeline

logger = logging.getLogger(__name__)


def _existing_file(path: str) -> str:
    if not os.path.isfile(path):
        raise argparse.ArgumentTypeError(f"文件不存在: {path}")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rheo", description="RheOFormer 数据生成、训练与评估工具")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-rheometric", help="生成流变时间序列数据集")
    p.add_argument("--model", required=True, choices=[k.value for k in ConstitutiveKind])
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--protocol", default=Protocol.GRF.value, choices=[k.value for k in Protocol])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-flow1d", help="生成启动槽道流场数据集")
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--dpdx-min", type=float, required=True)
    p.add_argument("--dpdx-max", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="训练模型，写出检查点与损失历史")
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--config", type=_existing_file, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="以前 k 个快照为条件写出预测场")
    p.add_argument("--checkpoint", type=_existing_file, required=True)
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--condition-steps", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="写出评估报告与逐点误差场")
    p.add_argument("--checkpoint", type=_existing_file, required=True)
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--condition-steps", type=int, default=None)
    p.add_argument("--report", required=True)

    p = sub.add_parser("plot", help="输出 SVG 图与同名 CSV 表")
    p.add_argument("--data", type=_existing_file, default=None)
    p.add_argument("--report", type=_existing_file, default=None)
    p.add_argument("--prediction", type=_existing_file, default=None)
    p.add_argument("--what", required=True, choices=["series", "heatmap", "error"])
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="生成 -> 训练 -> 评估 -> 绘图 一次跑完")
    p.add_argument("--model", required=True, choices=[k.value for k in ConstitutiveKind] + [FLOW_MODEL])
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--protocol", default=Protocol.GRF.value, choices=[k.value for k in Protocol])
    p.add_argument("--dpdx-min", type=float, default=-2.0)
    p.add_argument("--dpdx-max", type=float, default=-0.5)
    p.add_argument("--config", type=_existing_file, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    return parser


def _seed(args: argparse.Namespace, settings: RheoSettings) -> int:
    return args.seed if args.seed is not None else settings.runtime.seed


def _gen_rheometric(args: argparse.Namespace, settings: RheoSettings) -> int:
    experiments.generate_rheometric(args.model, args.protocol, args.n_samples, _seed(args, settings),
                                    args.out, settings.materials)
    logger.info(f"数据集已写入 {args.out}")
    return 0


def _gen_flow1d(args: argparse.Namespace, settings: RheoSettings) -> int:
    experiments.generate_flow(args.n_samples, args.dpdx_min, args.dpdx_max, args.out, settings.materials.channel)
    logger.info(f"数据集已写入 {args.out}")
    return 0


def _train(args: argparse.Namespace, settings: RheoSettings) -> int:
    ckpt, history = experiments.train_from_file(args.data, args.config, args.out, _seed(args, settings))
    logger.info(f"检查点 {ckpt}，损失历史 {history}")
    return 0


def _predict(args: argparse.Namespace, settings: RheoSettings) -> int:
    experiments.predict_to_file(args.checkpoint, args.data, args.condition_steps, args.out)
    logger.info(f"预测已写入 {args.out}")
    return 0


def _eval(args: argparse.Namespace, settings: RheoSettings) -> int:
    report = experiments.eval_to_file(args.checkpoint, args.data, args.condition_steps, args.report)
    logger.info(f"逐通道相对 L2: {report['per_channel_l2']}")
    return 0


def _plot(args: argparse.Namespace, settings: RheoSettings) -> int:
    paths = experiments.plot_to_dir(args.out, args.what, args.data, args.report, args.prediction, args.sample)
    logger.info(f"写出 {len(paths)} 个文件到 {args.out}")
    return 0


def _pipeline(args: argparse.Namespace, settings: RheoSettings) -> int:
    final = run_pipeline({
        "out_dir": args.out or settings.runtime.output_dir,
        "model": args.model,
        "protocol": args.protocol,
        "n_samples": args.n_samples,
        "seed": _seed(args, settings),
        "dpdx_min": args.dpdx_min,
        "dpdx_max": args.dpdx_max,
        "config_path": args.config,
    })
    if final.get("error"):
        logger.error(f"流水线失败: {final['error']}")
        return 2
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, RheoSettings], int]] = {
    "gen-rheometric": _gen_rheometric,
    "gen-flow1d": _gen_flow1d,
    "train": _train,
    "predict": _predict,
    "eval": _eval,
    "plot": _plot,
    "pipeline": _pipeline,
}


def cli(argv: Optional[List[str]] = None) -> int:
    """运行一个子命令并返回退出码"""
    settings = get_settings()
    setup_logging(settings.logging)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return COMMANDS[args.command](args, settings)
    except RheoFormerError as e:
        logger.error(f"❌ {args.command} 失败 [{e.code}]: {e}")
        return 2
    except (OSError, ValueError) as e:
        logger.error(f"❌ {args.command} 失败: {e}")
        return 2
    except Exception as e:
        logger.exception(f"💥 {args.command} 出现未预期错误: {e}")
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
