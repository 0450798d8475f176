# -*- coding: utf-8 -*-
"""
稀疏算子基准测试命令
qing-sparse bench --d-model 1024 --d-ff 4096 --sparsity 0.0,0.5,0.7,0.9,0.95 --trials 200 --out bench.csv
"""

import argparse
from pathlib import Path

from ..core.activations import ActivationKind
from ..kernels.bench import BenchConfig, bench, write_bench_csv
from .base_command import BaseCommand


class BenchCommand(BaseCommand):
    """计时步骤(2)/(3)的稀疏算子与稠密基准"""

    @classmethod
    def INPUT_TYPES(cls):
        defaults = BenchConfig()
        return {
            "optional": {
                "d_model": ("INT", {"default": defaults.d_model, "help": "隐藏维度 d_model"}),
                "d_ff": ("INT", {"default": defaults.d_ff, "help": "中间维度 d_ff"}),
                "sparsity": ("FLOATS", {"default": defaults.sparsity, "help": "稀疏度水平，逗号分隔"}),
                "trials": ("INT", {"default": defaults.trials, "help": "计时次数（≥100）"}),
                "warmup": ("INT", {"default": defaults.warmup, "help": "预热次数（不计时）"}),
                "threshold": ("FLOAT", {"default": 0.0, "help": "FATReLU 阈值，0 表示 ReLU"}),
            },
        }

    CATEGORY = "🎨QING/算子"

    def execute(self, args: argparse.Namespace) -> int:
        cfg = BenchConfig(
            d_model=args.d_model,
            d_ff=args.d_ff,
            sparsity=list(args.sparsity),
            trials=args.trials,
            warmup=args.warmup,
            seed=0 if args.seed is None else args.seed,
            threads=args.threads,
            activation=ActivationKind.fatrelu(args.threshold),
        )
        table = bench(cfg)

        # --out 可以是 CSV 文件路径或输出目录
        if args.out and str(args.out).endswith(".csv"):
            path = Path(args.out)
        else:
            path = self.out_dir(args, "bench") / "bench.csv"
        write_bench_csv(table, path)

        lines = [f"{'step':<20}{'sparsity':>9}{'median_us':>12}{'min_us':>10}{'p90_us':>10}{'speedup':>9}"]
        for r in table.rows:
            lines.append(
                f"{r.step:<20}{r.sparsity:>9.2f}{r.median_us:>12.1f}{r.min_us:>10.1f}{r.p90_us:>10.1f}"
                f"{r.speedup_vs_dense:>9.2f}"
            )
        lines.append(f"📁 {path}")
        self.report(lines)
        return 0


# 命令注册
COMMAND_CLASS_MAPPINGS = {
    "bench": BenchCommand,
}

COMMAND_DISPLAY_NAME_MAPPINGS = {
    "bench": "稀疏算子基准测试",
}
