# -*- coding: utf-8 -*-
"""
激活稀疏度度量
- 稀疏度 = x_1 中精确为0的元素比例（不使用任何epsilon）
- 逐层、跨层平均、逐语料统计
- FATReLU 阈值扫描
- 逐层稀疏度序列（供外部作图）
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.activations import ActivationKind
from ..core.errors import RejectedInputError, check_dims
from ..core.gated_ffn import ToyModel, forward_model
from ..utils.export_tools import write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass
class SparsityReport:
    """稀疏度报告：逐层稀疏度、跨层平均、样本数及可选的步数/语料标签"""
    per_layer: List[float]
    average: float
    sample_count: int
    step_index: Optional[int] = None
    corpus_label: Optional[str] = None
    zero_counts: List[int] = field(default_factory=list)
    d_ff: int = 0

    def to_dict(self) -> Dict:
        return {
            "corpus": self.corpus_label,
            "step": self.step_index,
            "sample_count": self.sample_count,
            "average": self.average,
            "per_layer": list(self.per_layer),
        }


@dataclass
class ThresholdSweepResult:
    """阈值扫描结果"""
    thresholds: List[float]
    sparsity: List[float]
    val_loss: List[float]
    chosen: Optional[float]
    baseline_sparsity: float
    baseline_loss: float
    tolerance: float

    def rows(self) -> List[Tuple]:
        rows = [(0.0, self.baseline_sparsity, self.baseline_loss, self.chosen is None)]
        for t, s, l in zip(self.thresholds, self.sparsity, self.val_loss):
            rows.append((t, s, l, self.chosen == t))
        return rows


@dataclass
class LayerwiseSeries:
    """逐层稀疏度序列，带标签以便作图"""
    label: str
    step: Optional[int]
    points: List[Tuple[int, float]]


def sparsity_of(x1: np.ndarray) -> float:
    """精确为0的元素个数 / 长度"""
    if x1.size < 1:
        raise RejectedInputError("sparsity_of 需要非空向量")
    return int(np.count_nonzero(x1 == 0)) / x1.size


def _zero_counts(model: ToyModel, x: np.ndarray) -> List[int]:
    _, trace = forward_model(model, x)
    return [int(np.count_nonzero(layer.x1 == 0)) for layer in trace.layers]


def measure(
    model: ToyModel,
    corpus: Sequence[np.ndarray],
    label: Optional[str] = None,
    step: Optional[int] = None,
    max_workers: int = 1,
) -> SparsityReport:
    """
    在语料上统计稀疏度

    per_layer[i] = 语料上 sparsity_of(x_1^{(i)}) 的平均值；average = 各层平均（层间等权）。
    可并发计算各输入；聚合是对整数零计数的求和，结果与调度顺序无关。
    """
    if len(corpus) == 0:
        raise RejectedInputError("语料为空 (empty corpus)，无法统计稀疏度")
    for x in corpus[:1]:
        check_dims(model.d_model, len(x), "measure: corpus vector length")

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            counts = list(pool.map(lambda x: _zero_counts(model, x), corpus))
    else:
        counts = [_zero_counts(model, x) for x in corpus]

    totals = [sum(c[i] for c in counts) for i in range(model.num_layers)]
    n = len(corpus)
    per_layer = [total / (n * model.d_ff) for total in totals]
    return SparsityReport(
        per_layer=per_layer,
        average=math.fsum(per_layer) / len(per_layer),
        sample_count=n,
        step_index=step,
        corpus_label=label,
        zero_counts=totals,
        d_ff=model.d_ff,
    )


def merge_reports(reports: Sequence[SparsityReport], label: str) -> SparsityReport:
    """按样本数加权合并多个报告，等价于在拼接语料上测量"""
    if not reports:
        raise RejectedInputError("merge_reports 需要至少一个报告")
    d_ff = reports[0].d_ff
    n = sum(r.sample_count for r in reports)
    totals = [sum(r.zero_counts[i] for r in reports) for i in range(len(reports[0].zero_counts))]
    per_layer = [total / (n * d_ff) for total in totals]
    return SparsityReport(
        per_layer=per_layer,
        average=math.fsum(per_layer) / len(per_layer),
        sample_count=n,
        step_index=reports[0].step_index,
        corpus_label=label,
        zero_counts=totals,
        d_ff=d_ff,
    )


def threshold_sweep(
    model: ToyModel,
    candidates: Sequence[float],
    val_corpus: Sequence[np.ndarray],
    val_loss_fn: Callable[[ToyModel], float],
    tolerance: float = 0.01,
) -> ThresholdSweepResult:
    """
    FATReLU 阈值扫描

    对每个候选T，将模型激活替换为 FATReLU(T)，记录平均稀疏度与验证损失；
    选择验证损失不超过 ReLU 基线 (1 + tolerance) 倍的最大T，若没有满足条件的候选则为 None。
    """
    if len(candidates) == 0:
        raise RejectedInputError("候选阈值列表为空 (empty candidate list)")
    if any(t <= 0 for t in candidates):
        raise RejectedInputError(f"候选阈值必须全部为正数: {list(candidates)}")
    if any(b < a for a, b in zip(candidates, candidates[1:])):
        raise RejectedInputError(f"候选阈值必须升序排列: {list(candidates)}")

    baseline_model = model.with_activation(ActivationKind.relu())
    baseline_sparsity = measure(baseline_model, val_corpus, label="validation").average
    baseline_loss = float(val_loss_fn(baseline_model))
    allowed = baseline_loss + tolerance * abs(baseline_loss)

    sparsity, losses = [], []
    chosen = None
    for t in candidates:
        shifted = model.with_activation(ActivationKind.fatrelu(t))
        sparsity.append(measure(shifted, val_corpus, label="validation").average)
        losses.append(float(val_loss_fn(shifted)))
        if losses[-1] <= allowed:
            chosen = float(t)
        logger.debug("阈值 T=%g: sparsity=%.4f, val_loss=%.6g", t, sparsity[-1], losses[-1])

    logger.info(
        "✓ 阈值扫描完成: 基线稀疏度 %.4f, 选中 T=%s", baseline_sparsity, "无" if chosen is None else f"{chosen:g}"
    )
    return ThresholdSweepResult(
        thresholds=[float(t) for t in candidates],
        sparsity=sparsity,
        val_loss=losses,
        chosen=chosen,
        baseline_sparsity=baseline_sparsity,
        baseline_loss=baseline_loss,
        tolerance=tolerance,
    )


def layerwise_report(report: SparsityReport, tag: Optional[str] = None) -> LayerwiseSeries:
    """逐层稀疏度序列，原样输出"""
    label = tag or report.corpus_label or "model"
    return LayerwiseSeries(
        label=label,
        step=report.step_index,
        points=[(i, value) for i, value in enumerate(report.per_layer)],
    )


# ========================================
# 报告输出（CSV / JSON，供外部作图）
# ========================================

SPARSITY_CSV_HEADER = ["corpus", "step", "layer", "sparsity"]


def sparsity_rows(reports: Sequence[SparsityReport]) -> List[Tuple]:
    rows = []
    for report in reports:
        step = "" if report.step_index is None else report.step_index
        for layer, value in enumerate(report.per_layer):
            rows.append((report.corpus_label or "", step, layer, value))
    return rows


def write_sparsity_csv(reports: Sequence[SparsityReport], path: Path) -> Path:
    return write_csv(path, SPARSITY_CSV_HEADER, sparsity_rows(reports))


def write_sparsity_json(reports: Sequence[SparsityReport], path: Path) -> Path:
    return write_json(path, {"reports": [r.to_dict() for r in reports]})


def write_layerwise_csv(series: Sequence[LayerwiseSeries], path: Path) -> Path:
    rows = []
    for s in series:
        step = "" if s.step is None else s.step
        rows.extend((s.label, step, layer, value) for layer, value in s.points)
    return write_csv(path, ["series", "step", "layer", "sparsity"], rows)


def write_sweep_csv(result: ThresholdSweepResult, path: Path) -> Path:
    return write_csv(path, ["threshold", "sparsity", "val_loss", "chosen"], result.rows())


@dataclass
class SweepConfig:
    """阈值扫描配置（对应配置文件 threshold_sweep 段）"""
    candidates: List[float] = field(default_factory=lambda: [0.005, 0.01, 0.02, 0.03])
    tolerance: float = 0.01

    def diagnostics(self) -> List[str]:
        problems = []
        if not self.candidates:
            problems.append("threshold_sweep.candidates: 候选阈值列表为空 (empty candidate list)")
        if any(t <= 0 for t in self.candidates):
            problems.append(f"threshold_sweep.candidates: 候选阈值必须全部为正数 {self.candidates}")
        if any(b < a for a, b in zip(self.candidates, self.candidates[1:])):
            problems.append(f"threshold_sweep.candidates: 候选阈值必须升序排列 {self.candidates}")
        if self.tolerance < 0:
            problems.append(f"threshold_sweep.tolerance: 必须非负，实际 {self.tolerance}")
        return problems

    def to_config(self) -> Dict:
        return {"candidates": list(self.candidates), "tolerance": self.tolerance}

    @classmethod
    def from_config(cls, config: Dict) -> "SweepConfig":
        return cls(
            candidates=[float(t) for t in config.get("candidates", [0.005, 0.01, 0.02, 0.03])],
            tolerance=float(config.get("tolerance", 0.01)),
        )
