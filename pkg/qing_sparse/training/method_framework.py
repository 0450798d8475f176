# -*- coding: utf-8 -*-
"""
训练方法基础框架
为所有 ReLU 化方法与基线提供统一的适配器接口
- Original：继续 Swish 训练
- Vanilla ReLU / Shifted ReLU：替换激活后继续训练，无正则
- Fixed L1：替换激活后使用固定系数的 L1 正则
- Progressive：替换阶段(λ=0) → 渐进式 L1 正则 → 激活阈值平移(FATReLU)
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Type

from ..core.activations import ActivationKind
from ..core.errors import ConfigurationError
from ..core.gated_ffn import ToyModel
from .regularization import RegularizationSchedule, lambda_at
from .sparsity_metrics import SweepConfig, ThresholdSweepResult, threshold_sweep

if TYPE_CHECKING:
    from .synthetic_data import SyntheticTask

logger = logging.getLogger(__name__)


class MethodType(Enum):
    """训练方法枚举"""
    ORIGINAL = "original"
    VANILLA_RELU = "vanilla_relu"
    SHIFTED_RELU = "shifted_relu"
    FIXED_L1 = "fixed_l1"
    PROGRESSIVE = "progressive"


@dataclass
class MethodConfig:
    """方法配置数据类"""
    name: str
    method_type: MethodType
    bias: float = 0.0
    fixed_lambda: Optional[float] = None
    schedule: Optional[RegularizationSchedule] = None
    shift_threshold: bool = True
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @classmethod
    def original(cls) -> "MethodConfig":
        return cls(name="original", method_type=MethodType.ORIGINAL)

    @classmethod
    def vanilla_relu(cls) -> "MethodConfig":
        return cls(name="vanilla_relu", method_type=MethodType.VANILLA_RELU)

    @classmethod
    def shifted_relu(cls, bias: float, name: Optional[str] = None) -> "MethodConfig":
        return cls(name=name or "shifted_relu", method_type=MethodType.SHIFTED_RELU, bias=float(bias))

    @classmethod
    def fixed_l1(cls, fixed_lambda: Optional[float] = None,
                 schedule: Optional[RegularizationSchedule] = None) -> "MethodConfig":
        return cls(name="fixed_l1", method_type=MethodType.FIXED_L1, fixed_lambda=fixed_lambda, schedule=schedule)

    @classmethod
    def progressive(cls, schedule: RegularizationSchedule, sweep: Optional[SweepConfig] = None,
                    shift_threshold: bool = True) -> "MethodConfig":
        return cls(
            name="progressive",
            method_type=MethodType.PROGRESSIVE,
            schedule=schedule,
            sweep=sweep or SweepConfig(),
            shift_threshold=shift_threshold,
        )


@dataclass
class FinalizeResult:
    """训练结束后的收尾结果"""
    model: ToyModel
    pre_shift_model: Optional[ToyModel] = None
    sweep: Optional[ThresholdSweepResult] = None


class BaseMethodAdapter(ABC):
    """方法适配器抽象基类"""
    _IS_BASE_CLASS = True

    def __init__(self, config: MethodConfig, substitution_steps: int, total_steps: int):
        self.config = config
        self.substitution_steps = substitution_steps
        self.total_steps = total_steps

    @abstractmethod
    def training_activation(self) -> ActivationKind:
        """训练使用的激活函数"""
        pass

    def lambda_at_step(self, t: int) -> float:
        """第t步的L1系数，默认不做正则"""
        return 0.0

    def diagnostics(self) -> List[str]:
        return []

    def lambda_label(self) -> float:
        """写入对比表的λ（无正则为0）"""
        return 0.0

    def prepare_model(self, model: ToyModel) -> ToyModel:
        """激活函数替换：相同权重，新激活"""
        return model.with_activation(self.training_activation())

    def finalize(self, model: ToyModel, task: "SyntheticTask") -> FinalizeResult:
        return FinalizeResult(model=model)


class OriginalAdapter(BaseMethodAdapter):
    """保持 Swish，继续训练相同步数"""

    def training_activation(self) -> ActivationKind:
        return ActivationKind.swish()


class VanillaReLUAdapter(BaseMethodAdapter):

    def training_activation(self) -> ActivationKind:
        return ActivationKind.relu()


class ShiftedReLUAdapter(BaseMethodAdapter):
    """ReLU(z − b)，全局统一偏置b"""

    def training_activation(self) -> ActivationKind:
        return ActivationKind.shifted_relu(self.config.bias)

    def diagnostics(self) -> List[str]:
        if self.config.bias < 0:
            return [f"methods.{self.config.name}.bias: 必须非负 (b ≥ 0)，实际 {self.config.bias}"]
        return []


class FixedL1Adapter(BaseMethodAdapter):
    """
    固定系数L1正则，替换阶段之后生效
    未显式给出λ时取渐进调度最后一个递增阶段内λ的平均值
    """

    def __init__(self, config: MethodConfig, substitution_steps: int, total_steps: int):
        super().__init__(config, substitution_steps, total_steps)
        if config.fixed_lambda is not None:
            self.fixed_lambda = float(config.fixed_lambda)
        elif config.schedule is not None:
            self.fixed_lambda = config.schedule.final_stage_mean()
        else:
            raise ConfigurationError(
                "❌ fixed_l1 需要 lambda 或渐进调度表之一",
                ["methods.fixed_l1: 缺少 lambda 且没有可用的 schedule"],
            )

    def training_activation(self) -> ActivationKind:
        return ActivationKind.relu()

    def lambda_at_step(self, t: int) -> float:
        return self.fixed_lambda if t > self.substitution_steps else 0.0

    def lambda_label(self) -> float:
        return self.fixed_lambda

    def diagnostics(self) -> List[str]:
        if self.fixed_lambda < 0:
            return [f"methods.fixed_l1.lambda: 必须非负，实际 {self.fixed_lambda}"]
        return []


class ProgressiveAdapter(BaseMethodAdapter):
    """
    渐进式稀疏正则
    t ≤ substitution_steps 时 λ=0；之后按调度表取 lambda_at(t)；T_S 之后保持 λ_S
    训练结束后做阈值扫描并替换为 FATReLU(T)
    """

    def __init__(self, config: MethodConfig, substitution_steps: int, total_steps: int):
        super().__init__(config, substitution_steps, total_steps)
        if config.schedule is None:
            raise ConfigurationError("❌ progressive 方法需要调度表", ["schedule: 缺少 stages"])
        self.schedule = config.schedule

    def training_activation(self) -> ActivationKind:
        return ActivationKind.relu()

    def lambda_at_step(self, t: int) -> float:
        if t <= self.substitution_steps:
            return 0.0
        if t <= self.schedule.end_step:
            return lambda_at(self.schedule, t)
        return self.schedule.peak_factors[-1]

    def lambda_label(self) -> float:
        return self.schedule.peak_factors[-1]

    def diagnostics(self) -> List[str]:
        problems = []
        first_end = self.schedule.stage_boundaries[0]
        if first_end <= self.substitution_steps:
            problems.append(
                f"schedule.stages[0].end_step: 累计步数 T_1={first_end} 必须大于替换阶段步数 "
                f"substitution_steps={self.substitution_steps}"
            )
        if self.schedule.end_step > self.total_steps:
            problems.append(
                f"schedule.stages[-1].end_step: T_S={self.schedule.end_step} 超过 total_steps={self.total_steps}"
            )
        problems.extend(self.config.sweep.diagnostics())
        return problems

    def finalize(self, model: ToyModel, task: "SyntheticTask") -> FinalizeResult:
        if not self.config.shift_threshold:
            return FinalizeResult(model=model, pre_shift_model=model)
        sweep = threshold_sweep(
            model,
            self.config.sweep.candidates,
            list(task.val_x),
            task.val_loss,
            tolerance=self.config.sweep.tolerance,
        )
        if sweep.chosen is None:
            logger.warning("⚠ 没有阈值满足验证损失容差，保留 ReLU")
            return FinalizeResult(model=model, pre_shift_model=model, sweep=sweep)
        shifted = model.with_activation(ActivationKind.fatrelu(sweep.chosen))
        logger.info("✓ 激活阈值平移: FATReLU(T=%g)", sweep.chosen)
        return FinalizeResult(model=shifted, pre_shift_model=model, sweep=sweep)


# 方法适配器注册表
METHOD_ADAPTERS: Dict[MethodType, Type[BaseMethodAdapter]] = {
    MethodType.ORIGINAL: OriginalAdapter,
    MethodType.VANILLA_RELU: VanillaReLUAdapter,
    MethodType.SHIFTED_RELU: ShiftedReLUAdapter,
    MethodType.FIXED_L1: FixedL1Adapter,
    MethodType.PROGRESSIVE: ProgressiveAdapter,
}


def create_adapter(config: MethodConfig, substitution_steps: int, total_steps: int) -> BaseMethodAdapter:
    adapter_class = METHOD_ADAPTERS[config.method_type]
    return adapter_class(config, substitution_steps, total_steps)


def parse_method_type(name: str) -> MethodType:
    try:
        return MethodType(name.lower())
    except ValueError:
        choices = ", ".join(m.value for m in MethodType)
        raise ConfigurationError(f"❌ 未知的训练方法: '{name}'\n✅ 可选: {choices}", [f"methods: 未知方法 '{name}'"])


def bias_sweep_methods(biases: List[float]) -> List[MethodConfig]:
    """Shifted ReLU 偏置扫描，每个 b 一个方法配置"""
    return [MethodConfig.shifted_relu(b, name=f"shifted_relu_b{b:g}") for b in biases]


def target_activation(config: MethodConfig, shifted_threshold: Optional[float] = None) -> ActivationKind:
    """方法最终模型的激活函数（阈值平移结果未知时按 ReLU 计）"""
    if config.method_type is MethodType.ORIGINAL:
        return ActivationKind.swish()
    if config.method_type is MethodType.SHIFTED_RELU:
        return ActivationKind.shifted_relu(config.bias)
    if config.method_type is MethodType.PROGRESSIVE and shifted_threshold:
        return ActivationKind.fatrelu(shifted_threshold)
    return ActivationKind.relu()
