# Copyright (c) 2025 左岚. All rights reserved.
"""端到端流水线模块

用 LangGraph 状态图串联 生成数据 -> 训练 -> 评估 -> 绘图 四个阶段。
任一阶段抛出 RheoFormerError（含发散）时写入 error 字段，条件边转入 failure 节点后结束。
"""

import logging
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, TypedDict

from langgraph.graph import END, START, StateGraph

from . import experiments
from .checkpoint import load_checkpoint
from .logging_config import get_stage_logger, log_stage_complete, log_stage_error, log_stage_start
from .rheo_types import RheoFormerError

logger = logging.getLogger(__name__)

FLOW_MODEL = "flow1d"


class PipelineState(TypedDict, total=False):
    """流水线状态"""

    out_dir: str
    model: str                          # tevp / giesekus / oldroydb / flow1d
    protocol: str
    n_samples: int
    seed: int
    dpdx_min: float
    dpdx_max: float
    config_path: Optional[str]
    dataset_path: str
    checkpoint_path: str
    history_path: str
    report_path: str
    report: Dict[str, Any]
    plot_paths: List[str]
    completed: List[str]
    error: Optional[str]
    failed_stage: Optional[str]


class BaseNode(ABC):
    """流水线节点的抽象基类"""

    def __init__(self, name: str) -> None:
        self.name = name
        self.logger = get_stage_logger(name)

    @abstractmethod
    def execute(self, state: PipelineState) -> Dict[str, Any]:
        """执行节点逻辑，返回要合并进状态的字段"""

    def __call__(self, state: PipelineState) -> Dict[str, Any]:
        log_stage_start(self.logger, self.name)
        try:
            update = self.execute(state)
        except RheoFormerError as e:
            log_stage_error(self.logger, self.name, str(e))
            return {"error": f"{type(e).__name__}: {e}", "failed_stage": self.name}
        log_stage_complete(self.logger, self.name)
        update["completed"] = list(state.get("completed", [])) + [self.name]
        return update


class GenerateNode(BaseNode):
    def __init__(self) -> None:
        super().__init__("generate")

    def execute(self, state: PipelineState) -> Dict[str, Any]:
        path = os.path.join(state["out_dir"], "dataset.rheo")
        if state["model"] == FLOW_MODEL:
            experiments.generate_flow(state["n_samples"], state.get("dpdx_min", -2.0),
                                      state.get("dpdx_max", -0.5), path)
        else:
            experiments.generate_rheometric(state["model"], state.get("protocol", "grf"),
                                            state["n_samples"], state.get("seed", 0), path)
        return {"dataset_path": path}


class TrainNode(BaseNode):
    def __init__(self) -> None:
        super().__init__("train")

    def execute(self, state: PipelineState) -> Dict[str, Any]:
        ckpt, history = experiments.train_from_file(
            state["dataset_path"], state.get("config_path"), state["out_dir"], state.get("seed"))
        return {"checkpoint_path": ckpt, "history_path": history}


class EvaluateNode(BaseNode):
    """在训练时留出的测试集上评估（没有测试样本时用全部样本）"""

    def __init__(self) -> None:
        super().__init__("evaluate")

    def execute(self, state: PipelineState) -> Dict[str, Any]:
        ckpt = load_checkpoint(state["checkpoint_path"])
        test = ckpt.metadata.get("split", {}).get("test") or None
        path = os.path.join(state["out_dir"], "report.json")
        report = experiments.eval_to_file(state["checkpoint_path"], state["dataset_path"], None, path, test)
        return {"report_path": path, "report": report}


class PlotNode(BaseNode):
    def __init__(self) -> None:
        super().__init__("plot")

    def execute(self, state: PipelineState) -> Dict[str, Any]:
        plot_dir = os.path.join(state["out_dir"], "plots")
        paths = experiments.plot_to_dir(plot_dir, "heatmap", data=state["dataset_path"])
        paths += experiments.plot_to_dir(plot_dir, "error", report=state["report_path"])
        return {"plot_paths": paths}


class FailureNode(BaseNode):
    def __init__(self) -> None:
        super().__init__("failure")

    def execute(self, state: PipelineState) -> Dict[str, Any]:
        self.logger.error(f"流水线在 {state.get('failed_stage')} 阶段终止: {state.get('error')}")
        return {}


STAGE_ORDER = ["generate", "train", "evaluate", "plot"]


def route_after(state: PipelineState) -> str:
    """出错转 failure，否则进入下一阶段（最后一阶段之后结束）"""
    if state.get("error"):
        return "failure"
    done = state.get("completed", [])
    position = STAGE_ORDER.index(done[-1]) if done else -1
    if position + 1 < len(STAGE_ORDER):
        return STAGE_ORDER[position + 1]
    return END


class PipelineGraphBuilder:
    """流水线状态图构建器"""

    def __init__(self) -> None:
        self.builder = StateGraph(PipelineState)
        self.nodes = [GenerateNode(), TrainNode(), EvaluateNode(), PlotNode(), FailureNode()]

    def add_nodes(self) -> None:
        for node in self.nodes:
            self.builder.add_node(node.name, node)

    def add_edges(self) -> None:
        self.builder.add_edge(START, "generate")
        for position, stage in enumerate(STAGE_ORDER):
            following = STAGE_ORDER[position + 1] if position + 1 < len(STAGE_ORDER) else END
            self.builder.add_conditional_edges(stage, route_after, [following, "failure"])
        self.builder.add_edge("failure", END)

    def build_graph(self) -> Any:
        logger.info("构建流水线图")
        try:
            self.add_nodes()
            self.add_edges()
            graph = self.builder.compile()
        except Exception as e:
            logger.error(f"图构建失败: {e}")
            raise RuntimeError(f"图构建失败: {e}") from e
        logger.info("图构建成功")
        return graph


def create_pipeline_graph() -> Any:
    return PipelineGraphBuilder().build_graph()


def run_pipeline(initial: PipelineState) -> PipelineState:
    """运行完整流水线并返回最终状态"""
    os.makedirs(initial["out_dir"], exist_ok=True)
    state = dict(initial)
    state.setdefault("completed", [])
    return create_pipeline_graph().invoke(state)
