# -*- coding: utf-8 -*-
"""
激活预测器命令：predictor {train,evaluate} --model dir/ [--layer i] [--pairs N]
"""

import argparse
import dataclasses
import logging

from ..core.errors import ConfigurationError
from ..core.gated_ffn import load_model
from ..core.numerics import SeededRng
from ..experiment.pipeline import load_settings
from ..predictor.activation_predictor import (
    OraclePredictor,
    PredictorConfig,
    collect_pairs,
    evaluate_predictor,
    load_predictor,
    save_predictor,
    train_layer_predictors,
    write_predictor_csv,
)
from ..training.synthetic_data import make_task
from .base_command import BaseCommand

logger = logging.getLogger(__name__)

_CORPUS_STREAM = 31


class PredictorCommand(BaseCommand):
    """
    train：在给定模型上为每层（或 --layer 指定的一层）训练预测器，写出 predictor_metrics.csv 与各层预测器文件
    evaluate：在新采样的评估对上评估已保存的预测器（--predictor），或评估按 z 判定的精确预测（--oracle）
    """

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "positional": {
                "action": ("STRING", {"choices": ["train", "evaluate"], "help": "操作"}),
            },
            "required": {
                "config": ("PATH", {"help": "实验配置文件（predictor 段）"}),
                "model": ("PATH", {"help": "模型清单文件，或包含 model_final.json 的输出目录"}),
            },
            "optional": {
                "layer": ("INT", {"default": None, "help": "只处理该层（train 默认全部层，evaluate --oracle 默认第0层）"}),
                "pairs": ("INT", {"default": None, "help": "覆盖配置中的 predictor.pairs"}),
                "predictor": ("PATH", {"help": "evaluate 时使用的预测器清单文件"}),
                "oracle": ("BOOLEAN", {"help": "evaluate 时使用精确预测（召回率恒为1）"}),
            },
        }

    CATEGORY = "🎨QING/预测器"

    @staticmethod
    def resolve_config(cfg: PredictorConfig, args: argparse.Namespace, num_layers: int) -> PredictorConfig:
        """把 --pairs / --layer 合并进 predictor 段配置"""
        if args.pairs is not None:
            cfg = dataclasses.replace(cfg, pairs=args.pairs)
        problems = cfg.diagnostics()
        if args.layer is not None:
            if not 0 <= args.layer < num_layers:
                problems.append(f"--layer: 要求 0 ≤ layer < {num_layers}，实际 {args.layer}")
            else:
                cfg = dataclasses.replace(cfg, layers=[args.layer])
        if problems:
            raise ConfigurationError(f"❌ 预测器参数无效（{len(problems)} 项）", problems)
        return cfg

    def execute(self, args: argparse.Namespace) -> int:
        settings = load_settings(args.config, args.seed)
        seed = settings.seeds.get("predictor", 0)
        model = load_model(self.model_path(args.model))
        cfg = self.resolve_config(settings.predictor, args, model.num_layers)
        task = make_task(settings.model, settings.task, settings.seeds.get("task", 0))
        corpus = task.sample_mixture(cfg.pairs, SeededRng(seed, _CORPUS_STREAM))

        if args.action == "evaluate" and not args.oracle and args.predictor is None:
            raise ConfigurationError("❌ evaluate 需要 --predictor 或 --oracle", ["predictor: 缺少 --predictor"])
        out = self.out_dir(args, "predictor")

        if args.action == "train":
            fleet = train_layer_predictors(model, corpus, cfg, seed=seed, max_workers=settings.max_workers)
            write_predictor_csv(fleet.metrics, out / "predictor_metrics.csv")
            for p in fleet.predictors:
                save_predictor(p, out / f"predictor_layer{p.layer_index}.json")
            lines = [f"{'layer':>6}{'recall':>10}{'pred_sparsity':>15}"]
            for m in fleet.metrics:
                lines.append(f"{m.layer_index:>6}{m.recall:>10.4f}{m.predicted_sparsity:>15.4f}")
            lines.append(f"  mean{fleet.mean_recall:>10.4f}{fleet.mean_predicted_sparsity:>15.4f}")
            self.report(lines)
            return 0

        if args.oracle:
            layer = 0 if args.layer is None else args.layer
            predictor = OraclePredictor(model, layer)
        else:
            predictor = load_predictor(args.predictor)
            layer = predictor.layer_index
        ds = collect_pairs(model, corpus, layer, cfg.pairs, SeededRng(seed, _CORPUS_STREAM).child(layer),
                           cfg.eval_fraction, settings.max_workers)
        metrics = evaluate_predictor(predictor, ds)
        write_predictor_csv([metrics], out / "predictor_metrics.csv")
        self.report([
            f"✓ layer {layer}: recall={metrics.recall:.4f}, predicted_sparsity={metrics.predicted_sparsity:.4f} "
            f"({metrics.eval_pairs} 对)",
        ])
        return 0


# 命令注册
COMMAND_CLASS_MAPPINGS = {
    "predictor": PredictorCommand,
}

COMMAND_DISPLAY_NAME_MAPPINGS = {
    "predictor": "激活预测器训练与评估",
}
