# -*- coding: utf-8 -*-
"""
训练相关命令：train / compare / sweep-threshold
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import List

from ..core.activations import ActivationKind
from ..core.errors import ConfigurationError
from ..core.gated_ffn import load_model, save_model
from ..experiment.pipeline import load_settings
from ..training.sparsity_metrics import SweepConfig, threshold_sweep, write_sweep_csv
from ..training.synthetic_data import make_task
from ..training.trainer import (
    TrainConfig,
    bias_sweep_configs,
    compare_methods,
    pretrain,
    result_summary,
    run,
    write_comparison_csv,
    write_history_csv,
)
from ..utils.export_tools import write_json
from .base_command import BaseCommand

logger = logging.getLogger(__name__)


class TrainCommand(BaseCommand):
    """训练单个方法：Swish预训练 → 激活替换 → 正则训练（→ 阈值平移）"""

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "config": ("PATH", {"help": "实验配置文件 (JSON)"}),
            },
            "optional": {
                "method": ("STRING", {"help": "要训练的方法名，默认为 methods.target"}),
            },
        }

    CATEGORY = "🎨QING/训练"

    def execute(self, args: argparse.Namespace) -> int:
        settings = load_settings(args.config, args.seed)
        method = settings.method(args.method) if args.method else settings.target_method
        cfg = settings.train_config(method)
        out = self.out_dir(args, "train")

        task = make_task(settings.model, settings.task, settings.seeds.get("task", 0))
        checkpoint = pretrain(cfg, task)
        result = run(cfg, task=task, start_model=checkpoint)

        save_model(result.model, out / "model_final.json", {"method": method.name})
        write_history_csv([result.history], out / "history.csv")
        if result.sweep is not None:
            write_sweep_csv(result.sweep, out / "threshold_sweep.csv")
        summary = result_summary(result)
        write_json(out / "summary.json", summary)
        self.report([
            f"✓ {method.name}: sparsity={summary['sparsity']:.4f}, val_loss={summary['val_loss']:.6g}",
            f"📁 输出目录: {out}",
        ])
        return 0


class CompareCommand(BaseCommand):
    """
    方法对比
    给出一个配置文件时对比其中 methods.run 的全部方法（含偏置扫描）；
    给出多个配置文件时对比各文件的主方法，任务与训练预算必须一致
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "configs": ("PATHS", {"help": "一个或多个实验配置文件"}),
            },
        }

    CATEGORY = "🎨QING/训练"

    def execute(self, args: argparse.Namespace) -> int:
        all_settings = [load_settings(path, args.seed) for path in args.configs]
        base = all_settings[0]
        for path, settings in zip(args.configs[1:], all_settings[1:]):
            if settings.model != base.model or settings.task != base.task:
                raise ConfigurationError(
                    f"❌ {path} 的模型或任务配置与 {args.configs[0]} 不一致",
                    [f"compare: {path} 的 model/task 段与第一个配置不一致"],
                )

        if len(all_settings) == 1:
            configs = [base.train_config(m) for m in base.methods]
            configs += bias_sweep_configs(base.training, base.bias_sweep)
        else:
            configs = _target_configs(args.configs, all_settings)

        out = self.out_dir(args, "compare")
        task = make_task(base.model, base.task, base.seeds.get("task", 0))
        checkpoint = pretrain(configs[0], task)
        table = compare_methods(
            configs, task, checkpoint, probe_corpora=task.corpus_samples(), max_workers=base.max_workers
        )
        write_comparison_csv(table, out / "comparison.csv")
        write_history_csv([r.history for r in table.results], out / "history.csv")

        lines = [f"{'method':<24}{'sparsity':>10}{'val_loss':>14}"]
        for row in table.rows:
            lines.append(f"{row.method:<24}{row.sparsity:>10.4f}{row.val_loss:>14.6g}")
        lines.append(f"📁 输出目录: {out}")
        self.report(lines)
        return 0


def _target_configs(paths: List[Path], all_settings) -> List[TrainConfig]:
    """多个配置文件的主方法；重名时用文件名区分"""
    configs = []
    names = [s.target for s in all_settings]
    for path, settings in zip(paths, all_settings):
        method = settings.target_method
        if names.count(method.name) > 1:
            method = replace(method, name=f"{Path(path).stem}_{method.name}")
        configs.append(settings.train_config(method))
    return configs


class SweepThresholdCommand(BaseCommand):
    """对已训练的 ReLU 模型做 FATReLU 阈值扫描"""

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "config": ("PATH", {"help": "实验配置文件（提供验证集与默认候选阈值）"}),
                "model": ("PATH", {"help": "模型清单文件，或包含 model_final.json 的输出目录"}),
            },
            "optional": {
                "candidates": ("FLOATS", {"help": "候选阈值，逗号分隔，如 0.005,0.01,0.02"}),
                "tolerance": ("FLOAT", {"help": "验证损失相对容差"}),
                "apply": ("BOOLEAN", {"help": "保存应用所选阈值后的模型"}),
            },
        }

    CATEGORY = "🎨QING/训练"

    def execute(self, args: argparse.Namespace) -> int:
        settings = load_settings(args.config, args.seed)
        sweep_cfg = SweepConfig(
            candidates=args.candidates or settings.sweep.candidates,
            tolerance=settings.sweep.tolerance if args.tolerance is None else args.tolerance,
        )
        problems = sweep_cfg.diagnostics()
        if problems:
            raise ConfigurationError("❌ 阈值扫描配置无效\n" + "\n".join(problems), problems)

        model = load_model(self.model_path(args.model))
        task = make_task(settings.model, settings.task, settings.seeds.get("task", 0))
        result = threshold_sweep(model, sweep_cfg.candidates, list(task.val_x), task.val_loss, sweep_cfg.tolerance)

        out = self.out_dir(args, "sweep")
        write_sweep_csv(result, out / "threshold_sweep.csv")
        lines = [f"{'threshold':>10}{'sparsity':>10}{'val_loss':>14}"]
        for t, s, loss, chosen in result.rows():
            lines.append(f"{t:>10g}{s:>10.4f}{loss:>14.6g}" + ("  ←" if chosen else ""))
        if args.apply and result.chosen is not None:
            path = save_model(model.with_activation(ActivationKind.fatrelu(result.chosen)), out / "model_shifted.json")
            lines.append(f"✓ 已保存 FATReLU(T={result.chosen:g}) 模型: {path}")
        self.report(lines)
        return 0


# 命令注册
COMMAND_CLASS_MAPPINGS = {
    "train": TrainCommand,
    "compare": CompareCommand,
    "sweep-threshold": SweepThresholdCommand,
}

COMMAND_DISPLAY_NAME_MAPPINGS = {
    "train": "训练单个方法（替换 → 正则 → 阈值平移）",
    "compare": "多方法对比（含 Shifted ReLU 偏置扫描）",
    "sweep-threshold": "FATReLU 阈值扫描",
}
