# -*- coding: utf-8 -*-
"""
流水线命令：pipeline / validate
"""

import argparse
import logging

from ..experiment.pipeline import run_pipeline, validate_config
from ..utils.config_manager import get_config_manager
from .base_command import BaseCommand

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """端到端：替换 → 渐进正则 → 阈值平移 → 测量 → 对比 → 预测器 → 基准测试"""

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "config": ("PATH", {"help": "实验配置文件 (JSON)"}),
            },
        }

    CATEGORY = "🎨QING/流水线"

    def execute(self, args: argparse.Namespace) -> int:
        out = self.out_dir(args, "pipeline")
        manifest = run_pipeline(args.config, out, seed=args.seed, threads=args.threads)
        lines = [f"✅ 实验 {manifest.experiment_id} 完成 ({manifest.started_at} → {manifest.finished_at})"]
        lines += [f"  [{a.stage}] {a.path}" for a in manifest.artifacts]
        self.report(lines)
        return 0


class ValidateCommand(BaseCommand):
    """校验配置文件；有诊断时退出码为 2"""

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "config": ("PATH", {"help": "实验配置文件 (JSON)"}),
            },
            "optional": {
                "write_default": ("BOOLEAN", {"help": "先把默认配置模板写到 --config 路径（文件不存在时）"}),
            },
        }

    CATEGORY = "🎨QING/流水线"

    def execute(self, args: argparse.Namespace) -> int:
        if args.write_default and not args.config.exists():
            get_config_manager().save_config(args.config)
            logger.info("✓ 已写出默认配置模板: %s", args.config)
        diagnostics = validate_config(args.config, args.seed)
        if diagnostics:
            self.report([f"❌ {args.config}: {len(diagnostics)} 个问题"] + [f"  - {d}" for d in diagnostics])
            return 2
        self.report([f"✓ {args.config}: 配置有效"])
        return 0


# 命令注册
COMMAND_CLASS_MAPPINGS = {
    "pipeline": PipelineCommand,
    "validate": ValidateCommand,
}

COMMAND_DISPLAY_NAME_MAPPINGS = {
    "pipeline": "端到端实验流水线",
    "validate": "校验实验配置",
}
