# -*- coding: utf-8 -*-
"""
实验配置管理
- default_config 为完整的默认实验配置（带 "//" 注释键，可直接另存为模板）
- 用户配置文件按段深度合并到默认配置之上
- validate() 收集所有违反项；build() 生成各模块的类型化配置
"""

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.activations import ActivationKind
from ..core.errors import ConfigParseError, ConfigurationError, RejectedInputError
from ..core.gated_ffn import ModelConfig
from ..kernels.bench import BenchConfig
from ..predictor.activation_predictor import PredictorConfig
from ..training.method_framework import MethodConfig, MethodType, parse_method_type, target_activation
from ..training.optimizers import OptimizerConfig
from ..training.regularization import (
    RegularizationSchedule,
    RegularizationStage,
    schedule_diagnostics,
    schedule_preset,
)
from ..training.sparsity_metrics import SweepConfig
from ..training.synthetic_data import TaskConfig
from ..training.trainer import TrainConfig

logger = logging.getLogger(__name__)

SEED_KEYS = ["model", "task", "training", "predictor", "bench"]

# 构造类型化配置时可能出现的错误，统一转为诊断信息
_BUILD_ERRORS = (ConfigurationError, RejectedInputError, KeyError, TypeError, ValueError)


@dataclass
class ExperimentSettings:
    """类型化的实验配置"""
    name: str
    model: ModelConfig
    task: TaskConfig
    training: TrainConfig
    schedule: Optional[RegularizationSchedule]
    methods: List[MethodConfig]
    target: str
    bias_sweep: List[float]
    sweep: SweepConfig
    predictor: PredictorConfig
    bench: BenchConfig
    seeds: Dict[str, int] = field(default_factory=dict)
    max_workers: int = 1

    def method(self, name: str) -> MethodConfig:
        for m in self.methods:
            if m.name == name:
                return m
        choices = ", ".join(m.name for m in self.methods)
        raise ConfigurationError(
            f"❌ 方法 '{name}' 不在 methods.run 中\n✅ 可选: {choices}", [f"methods: 未配置的方法 '{name}'"]
        )

    @property
    def target_method(self) -> MethodConfig:
        return self.method(self.target)

    def train_config(self, method: MethodConfig) -> TrainConfig:
        return replace(self.training, method=method)

    @property
    def seed_list(self) -> List[int]:
        return [self.seeds[key] for key in SEED_KEYS if key in self.seeds]


class SparseConfigManager:
    """🎨QING 实验配置管理器"""

    def __init__(self):
        self.default_config: Dict[str, Any] = {
            "//": "════════════════════════════════════════════════════════════════════════════════",
            "// ": "                    🎨QING SparseFFN 实验配置文件                               ",
            "//  ": "════════════════════════════════════════════════════════════════════════════════",
            "//   ": "📝 未填写的段使用默认值；schedule 中 preset 非空时忽略 stages",

            "experiment": {
                "// ": "🧪 实验名称与并行度",
                "name": "reference",
                "max_workers": 1,
            },
            "model": {
                "// ": "🧱 K 层门控FFN玩具模型",
                "d_model": 32,
                "d_ff": 128,
                "num_layers": 2,
                "output_dim": 8,
                "init_scale": 1.0,
            },
            "task": TaskConfig().to_config(),
            "training": {
                "// ": "🏋 所有方法共享的训练预算；substitution_steps / warmup_steps 为 null 时分别取 20% / 1%",
                "total_steps": 2000,
                "pretrain_steps": 1000,
                "substitution_steps": None,
                "batch_size": 16,
                "eval_every": 50,
                "peak_lr": 0.05,
                "warmup_steps": None,
                "optimizer": OptimizerConfig().to_config(),
            },
            "schedule": {
                "// ": "📈 渐进式L1调度：end_step 为全局累计步数，必须大于替换阶段步数",
                "preset": None,
                "lambda_scale": 1.0,
                "stages": [
                    {"peak_lambda": 2e-3, "end_step": 600},
                    {"peak_lambda": 1e-2, "end_step": 1000},
                    {"peak_lambda": 1e-2, "end_step": 1200},
                    {"peak_lambda": 5e-2, "end_step": 1600},
                    {"peak_lambda": 5e-2, "end_step": 2000},
                ],
            },
            "methods": {
                "// ": "🔀 参与对比的方法；target 为流水线主方法（做阈值平移、预测器与基准测试）",
                "run": ["original", "vanilla_relu", "shifted_relu", "fixed_l1", "progressive"],
                "target": "progressive",
                "shifted_relu": {"bias": 0.1},
                "fixed_l1": {"lambda": None},
                "progressive": {"shift_threshold": True},
            },
            "bias_sweep": {
                "enabled": True,
                "biases": [0.1, 0.3, 0.5, 1.0],
            },
            "threshold_sweep": SweepConfig().to_config(),
            "predictor": {
                **PredictorConfig().to_config(),
                "pairs": 5000,
            },
            "bench": {
                **BenchConfig().to_config(),
                "// ": "⚡ activation 为 null 时使用主方法最终模型的激活函数",
                "activation": None,
            },
            "seeds": {key: 0 for key in SEED_KEYS},
            "version": "1.0.0",
        }

    # ========================================
    # 读写
    # ========================================

    def load_config(self, path: Optional[Path] = None) -> Dict[str, Any]:
        """
        读取配置文件并合并到默认配置之上

        Raises:
            ConfigParseError: JSON 无法解析（附行列号）
            OSError: 文件不可读
        """
        if path is None:
            return copy.deepcopy(self.default_config)
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            user_config = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParseError(str(path), e.lineno, e.colno, e.msg) from e
        if not isinstance(user_config, dict):
            raise ConfigParseError(str(path), 1, 1, "顶层必须是 JSON 对象")
        return merge_config(self.default_config, user_config)

    def save_config(self, path: Path, config: Optional[Dict[str, Any]] = None) -> bool:
        """保存配置文件（默认保存 default_config 作为模板）"""
        try:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(config if config is not None else self.default_config, f, ensure_ascii=False, indent=2)
            return True
        except OSError as e:
            logger.error("❌ 保存配置失败: %s", e)
            return False

    # ========================================
    # 校验与构造
    # ========================================

    def validate(self, config: Dict[str, Any]) -> List[str]:
        """返回全部诊断信息，空列表表示配置合法"""
        problems: List[str] = []

        model = self._section(config, "model")
        for key in ("d_model", "d_ff", "num_layers", "output_dim"):
            value = model.get(key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                problems.append(f"model.{key}: 维度必须是 ≥ 1 的整数 (dimension consistency)，实际 {value!r}")
        if problems:
            return problems

        try:
            self._build_training(config)
        except _BUILD_ERRORS as e:
            return _as_diagnostics(e, "training")

        problems.extend(self._schedule_diagnostics(config))
        if problems:
            return problems
        try:
            settings = self._build(config)
        except _BUILD_ERRORS as e:
            problems.extend(_as_diagnostics(e, "methods"))
            return problems

        seen = set()
        for method in settings.methods:
            if method.name in seen:
                continue
            seen.add(method.name)
            problems.extend(settings.train_config(method).diagnostics())
        if settings.target not in [m.name for m in settings.methods]:
            problems.append(f"methods.target: '{settings.target}' 不在 methods.run 中")
        for b in settings.bias_sweep:
            if b < 0:
                problems.append(f"bias_sweep.biases: 偏置必须非负 (b ≥ 0)，实际 {b}")

        problems.extend(settings.predictor.diagnostics())
        for layer in settings.predictor.layers or []:
            if not 0 <= layer < settings.model.num_layers:
                problems.append(
                    f"predictor.layers: 层编号 {layer} 超出范围 [0, {settings.model.num_layers})"
                )
        if settings.bench.enabled:
            problems.extend(settings.bench.diagnostics())
        seeds = self._section(config, "seeds")
        for key, value in seeds.items():
            if key.startswith("//"):
                continue
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                problems.append(f"seeds.{key}: 种子必须是非负整数，实际 {value!r}")
        return _dedupe(problems)

    def build(self, config: Dict[str, Any]) -> ExperimentSettings:
        """校验并构造类型化配置，不合法时抛出 ConfigurationError（附全部诊断）"""
        problems = self.validate(config)
        if problems:
            raise ConfigurationError("❌ 实验配置无效\n" + "\n".join(problems), problems)
        return self._build(config)

    def _section(self, config: Dict[str, Any], name: str) -> Dict[str, Any]:
        section = config.get(name, {})
        if not isinstance(section, dict):
            raise ConfigurationError(f"❌ 配置段 {name} 必须是对象", [f"{name}: 必须是 JSON 对象"])
        return section

    def _schedule_diagnostics(self, config: Dict[str, Any]) -> List[str]:
        schedule = self._section(config, "schedule")
        if schedule.get("preset"):
            return []
        stages = schedule.get("stages") or []
        try:
            peaks = [float(s["peak_lambda"]) for s in stages]
            ends = [int(s["end_step"]) for s in stages]
        except _BUILD_ERRORS as e:
            return [f"schedule.stages: 每个阶段需要 peak_lambda 与 end_step ({e})"]
        return schedule_diagnostics(peaks, ends)

    def _build_model(self, config: Dict[str, Any]) -> ModelConfig:
        model = self._section(config, "model")
        seeds = self._section(config, "seeds")
        return ModelConfig.from_config({**model, "activation": "swish", "seed": int(seeds.get("model", 0))})

    def _build_training(self, config: Dict[str, Any]) -> TrainConfig:
        training = self._section(config, "training")
        seeds = self._section(config, "seeds")
        experiment = self._section(config, "experiment")
        substitution = training.get("substitution_steps")
        warmup = training.get("warmup_steps")
        return TrainConfig(
            method=MethodConfig.original(),
            model=self._build_model(config),
            task=TaskConfig.from_config(self._section(config, "task")),
            total_steps=int(training.get("total_steps", 2000)),
            pretrain_steps=int(training.get("pretrain_steps", 1000)),
            substitution_steps=None if substitution is None else int(substitution),
            batch_size=int(training.get("batch_size", 16)),
            eval_every=int(training.get("eval_every", 50)),
            peak_lr=float(training.get("peak_lr", 0.05)),
            warmup_steps=None if warmup is None else int(warmup),
            optimizer=OptimizerConfig.from_config(training.get("optimizer", {})),
            seed=int(seeds.get("training", 0)),
            max_workers=int(experiment.get("max_workers", 1)),
        )

    def _build_schedule(self, config: Dict[str, Any], training: TrainConfig) -> RegularizationSchedule:
        schedule = self._section(config, "schedule")
        preset = schedule.get("preset")
        if preset:
            return schedule_preset(
                str(preset),
                training.total_steps,
                training.resolved_substitution_steps,
                float(schedule.get("lambda_scale", 1.0)),
            )
        stages = [
            RegularizationStage(peak_lambda=float(s["peak_lambda"]), end_step=int(s["end_step"]))
            for s in schedule.get("stages", [])
        ]
        return RegularizationSchedule(stages=stages)

    def _build_methods(self, config: Dict[str, Any], schedule: RegularizationSchedule) -> List[MethodConfig]:
        methods = self._section(config, "methods")
        sweep = SweepConfig.from_config(self._section(config, "threshold_sweep"))
        built = []
        for name in methods.get("run", []):
            method_type = parse_method_type(str(name))
            options = methods.get(method_type.value) or {}
            if method_type is MethodType.ORIGINAL:
                built.append(MethodConfig.original())
            elif method_type is MethodType.VANILLA_RELU:
                built.append(MethodConfig.vanilla_relu())
            elif method_type is MethodType.SHIFTED_RELU:
                built.append(MethodConfig.shifted_relu(float(options.get("bias", 0.1))))
            elif method_type is MethodType.FIXED_L1:
                fixed = options.get("lambda")
                built.append(MethodConfig.fixed_l1(None if fixed is None else float(fixed), schedule))
            else:
                built.append(MethodConfig.progressive(
                    schedule, sweep, shift_threshold=bool(options.get("shift_threshold", True))
                ))
        return built

    def _build(self, config: Dict[str, Any]) -> ExperimentSettings:
        training = self._build_training(config)
        schedule = self._build_schedule(config, training)
        methods = self._build_methods(config, schedule)
        methods_section = self._section(config, "methods")
        target = str(methods_section.get("target", "progressive")).lower()
        seeds = {
            key: int(value) for key, value in self._section(config, "seeds").items()
            if not key.startswith("//")
        }

        bias_section = self._section(config, "bias_sweep")
        biases = [float(b) for b in bias_section.get("biases", [])] if bias_section.get("enabled", True) else []

        bench_section = dict(self._section(config, "bench"))
        bench_activation = bench_section.pop("activation", None)
        bench = BenchConfig.from_config({**bench_section, "seed": seeds.get("bench", 0)})
        if bench_activation is not None:
            bench = replace(bench, activation=ActivationKind.from_config(bench_activation))
        else:
            target_config = next((m for m in methods if m.name == target), None)
            if target_config is not None:
                bench = replace(bench, activation=target_activation(target_config))

        experiment = self._section(config, "experiment")
        return ExperimentSettings(
            name=str(experiment.get("name", "experiment")),
            model=training.model,
            task=training.task,
            training=training,
            schedule=schedule,
            methods=methods,
            target=target,
            bias_sweep=biases,
            sweep=SweepConfig.from_config(self._section(config, "threshold_sweep")),
            predictor=PredictorConfig.from_config(self._section(config, "predictor")),
            bench=bench,
            seeds=seeds,
            max_workers=training.max_workers,
        )


def merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """深度合并：对象逐键合并，其余类型（含列表）整体替换"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_seed_override(config: Dict[str, Any], seed: Optional[int]) -> Dict[str, Any]:
    """命令行 --seed 覆盖所有种子"""
    if seed is None:
        return config
    config = copy.deepcopy(config)
    config["seeds"] = {key: int(seed) for key in SEED_KEYS}
    return config


def _as_diagnostics(error: BaseException, section: str) -> List[str]:
    if isinstance(error, ConfigurationError) and error.diagnostics:
        return list(error.diagnostics)
    return [f"{section}: {error}"]


def _dedupe(items: List[str]) -> List[str]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


# 全局配置管理器实例（延迟初始化）
_config_manager = None


def get_config_manager() -> SparseConfigManager:
    """获取配置管理器实例（延迟初始化）"""
    global _config_manager
    if _config_manager is None:
        _config_manager = SparseConfigManager()
    return _config_manager
