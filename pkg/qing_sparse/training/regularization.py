# -*- coding: utf-8 -*-
"""
稀疏正则化模块
- x_1 上的 L1 正则损失（所有层求和）
- 渐进式正则系数调度：热身阶段常数λ_1，之后每个递增阶段沿正弦曲线从 λ_{i-1} 升到 λ_i
- 余弦退火学习率（可选线性热身）
步数均从1开始计数，与调度表的累计步数一致
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

from ..core.errors import ConfigurationError, RejectedInputError
from ..core.gated_ffn import ForwardTrace


@dataclass(frozen=True)
class RegularizationStage:
    """单个阶段：峰值系数与累计结束步数"""
    peak_lambda: float
    end_step: int


def schedule_diagnostics(peaks: Sequence[float], ends: Sequence[int]) -> List[str]:
    """
    检查调度表的前置条件，返回违反项列表（空列表表示合法）
    - 峰值：0 < λ_1 ≤ λ_2 ≤ … ≤ λ_S（non-decreasing）
    - 结束步：0 < T_1 < T_2 < … < T_S（strictly increasing）
    """
    diagnostics = []
    if len(peaks) < 1:
        diagnostics.append("schedule: 至少需要一个阶段 (S ≥ 1)")
        return diagnostics
    if len(peaks) != len(ends):
        diagnostics.append(f"schedule: 峰值数量({len(peaks)})与结束步数量({len(ends)})不一致")
        return diagnostics
    if not peaks[0] > 0:
        diagnostics.append(f"schedule.stages[0].peak_lambda: 违反 λ_1 > 0 (positive first peak)，实际 {peaks[0]}")
    for i in range(1, len(peaks)):
        if peaks[i] < peaks[i - 1]:
            diagnostics.append(
                f"schedule.stages[{i}].peak_lambda: 违反峰值非递减约束 (non-decreasing peaks)，"
                f"{peaks[i - 1]} → {peaks[i]}"
            )
    if not ends[0] > 0:
        diagnostics.append(f"schedule.stages[0].end_step: 违反 T_1 > 0，实际 {ends[0]}")
    for i in range(1, len(ends)):
        if ends[i] <= ends[i - 1]:
            diagnostics.append(
                f"schedule.stages[{i}].end_step: 违反结束步严格递增约束 (strictly increasing boundaries)，"
                f"{ends[i - 1]} → {ends[i]}"
            )
    return diagnostics


@dataclass
class RegularizationSchedule:
    """渐进式正则调度表，构造时校验单调性"""
    stages: List[RegularizationStage] = field(default_factory=list)

    def __post_init__(self):
        diagnostics = schedule_diagnostics(self.peak_factors, self.stage_boundaries)
        if diagnostics:
            raise ConfigurationError("❌ 正则调度表无效\n" + "\n".join(diagnostics), diagnostics)

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def peak_factors(self) -> List[float]:
        return [stage.peak_lambda for stage in self.stages]

    @property
    def stage_boundaries(self) -> List[int]:
        return [stage.end_step for stage in self.stages]

    @property
    def end_step(self) -> int:
        return self.stages[-1].end_step

    def stage_of(self, t: int) -> int:
        """返回步t所在的阶段编号（1开始）"""
        for i, stage in enumerate(self.stages, start=1):
            if t <= stage.end_step:
                return i
        return self.num_stages

    def final_stage_mean(self) -> float:
        """最后一个递增阶段内λ的平均值（固定L1基线使用）；只有热身阶段时返回λ_1"""
        if self.num_stages == 1:
            return self.stages[0].peak_lambda
        start = self.stages[-2].end_step + 1
        values = [lambda_at(self, t) for t in range(start, self.end_step + 1)]
        return math.fsum(values) / len(values)

    def to_config(self) -> Dict[str, Any]:
        return {"stages": [{"peak_lambda": s.peak_lambda, "end_step": s.end_step} for s in self.stages]}

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "RegularizationSchedule":
        stages = [
            RegularizationStage(peak_lambda=float(s["peak_lambda"]), end_step=int(s["end_step"]))
            for s in config.get("stages", [])
        ]
        return cls(stages=stages)


def lambda_at(schedule: RegularizationSchedule, t: int) -> float:
    """
    第t步（1 ≤ t ≤ T_S）的正则系数
    t ≤ T_1 时为 λ_1；T_{i-1} < t ≤ T_i 时
    η = ½[sin(−π/2 + (t − T_{i-1})/(T_i − T_{i-1})·π) + 1]，λ = λ_{i-1} + η(λ_i − λ_{i-1})
    """
    if t < 1 or t > schedule.end_step:
        raise RejectedInputError(f"步数越界 (t out of range): t={t}，合法范围 [1, {schedule.end_step}]")
    stages = schedule.stages
    if t <= stages[0].end_step:
        return stages[0].peak_lambda
    for i in range(1, len(stages)):
        prev, cur = stages[i - 1], stages[i]
        if t <= cur.end_step:
            progress = (t - prev.end_step) / (cur.end_step - prev.end_step)
            eta = 0.5 * (math.sin(-math.pi / 2 + progress * math.pi) + 1.0)
            return prev.peak_lambda + eta * (cur.peak_lambda - prev.peak_lambda)
    return stages[-1].peak_lambda


def l1_loss(trace: ForwardTrace, lam: float) -> Tuple[float, List[float]]:
    """L1正则损失：每层 λ·||x_1||_1，总损失为各层之和"""
    if lam < 0:
        raise RejectedInputError(f"lambda 必须非负，实际: {lam}")
    per_layer = [lam * float(abs(layer.x1).sum()) for layer in trace.layers]
    return math.fsum(per_layer), per_layer


@dataclass
class LrSchedule:
    """余弦退火学习率（可选线性热身）"""
    peak_lr: float
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ConfigurationError(f"❌ peak_lr 必须为正数，实际: {self.peak_lr}")
        if self.warmup_steps < 0 or self.warmup_steps >= self.total_steps:
            raise ConfigurationError(
                f"❌ 学习率热身步数无效: warmup_steps={self.warmup_steps}，要求 0 ≤ warmup_steps < total_steps={self.total_steps}"
            )

    @classmethod
    def with_default_warmup(cls, peak_lr: float, total_steps: int) -> "LrSchedule":
        """默认热身步数为总步数的1%"""
        return cls(peak_lr=peak_lr, total_steps=total_steps, warmup_steps=total_steps // 100)


def lr_at(schedule: LrSchedule, t: int) -> float:
    """热身阶段线性升至 peak_lr，之后 peak_lr·½(1 + cos(π·(t − warmup)/(total − warmup)))"""
    if t < 0 or t > schedule.total_steps:
        raise RejectedInputError(f"步数越界 (t out of range): t={t}，合法范围 [0, {schedule.total_steps}]")
    if t < schedule.warmup_steps:
        return schedule.peak_lr * t / schedule.warmup_steps
    progress = (t - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ========================================
# 调度表预设：按大模型调度表的形状缩放到玩具规模
# ========================================

# (替换阶段结束步, [(峰值λ, 累计结束步), ...])
SCHEDULE_PRESETS: Dict[str, Tuple[int, List[Tuple[float, int]]]] = {
    "7b": (5000, [(5e-3, 6000), (5e-2, 10000), (5e-2, 12000), (5e-1, 16000), (5e-1, 16500)]),
    "13b": (5500, [(5e-3, 6750), (1e-2, 10750), (1e-2, 11000), (2e-2, 15000), (2e-2, 16000)]),
}


def schedule_preset(
    name: str,
    total_steps: int,
    substitution_steps: int,
    lambda_scale: float = 1.0,
) -> RegularizationSchedule:
    """
    将预设调度表的阶段相对长度映射到 (substitution_steps, total_steps] 区间

    参数:
        name: "7b" 或 "13b"
        total_steps: 玩具规模总步数（最后一个阶段在此结束）
        substitution_steps: 替换阶段（λ=0）的步数
        lambda_scale: 峰值λ的整体缩放
    """
    key = name.lower()
    if key not in SCHEDULE_PRESETS:
        raise ConfigurationError(f"❌ 未知的调度表预设: '{name}'\n✅ 可选: {', '.join(SCHEDULE_PRESETS)}")
    base_start, table = SCHEDULE_PRESETS[key]
    base_span = table[-1][1] - base_start
    span = total_steps - substitution_steps
    if span < len(table):
        raise ConfigurationError(f"❌ 步数不足以容纳 {len(table)} 个阶段: total={total_steps}, substitution={substitution_steps}")

    stages = []
    previous = substitution_steps
    for i, (peak, end) in enumerate(table):
        remaining = len(table) - i - 1
        scaled = substitution_steps + round((end - base_start) / base_span * span)
        scaled = max(scaled, previous + 1)
        scaled = min(scaled, total_steps - remaining)
        stages.append(RegularizationStage(peak_lambda=peak * lambda_scale, end_step=int(scaled)))
        previous = scaled
    return RegularizationSchedule(stages=stages)
