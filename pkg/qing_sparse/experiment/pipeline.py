# -*- coding: utf-8 -*-
"""
端到端实验流水线
validate → pretrain → substitute → regularize → shift → measure → compare → predictors → bench
各阶段顺序执行，每个阶段消费上一阶段的模型；任一阶段失败时保留已写出的文件并在清单中标记为 partial
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from ..core.errors import ConfigurationError, StageError
from ..core.gated_ffn import ToyModel, save_model
from ..core.numerics import SeededRng
from ..kernels.bench import BenchTable, bench, write_bench_csv
from ..predictor.activation_predictor import LayerPredictorFleet, train_layer_predictors, write_predictor_csv
from ..training.sparsity_metrics import (
    SparsityReport,
    layerwise_report,
    measure,
    merge_reports,
    write_layerwise_csv,
    write_sparsity_csv,
    write_sweep_csv,
)
from ..training.synthetic_data import MIXED_LABEL, SyntheticTask, make_task
from ..training.trainer import (
    ComparisonTable,
    TrainingSession,
    TrainResult,
    bias_sweep_configs,
    compare_methods,
    pretrain,
    write_comparison_csv,
    write_history_csv,
)
from ..utils.config_manager import ExperimentSettings, apply_seed_override, get_config_manager
from ..utils.export_tools import ExperimentManifest, write_json
from ..utils.system_info import get_module_versions

logger = logging.getLogger(__name__)

STAGE_ORDER = [
    "validate",
    "pretrain",
    "substitute",
    "regularize",
    "shift",
    "measure",
    "compare",
    "predictors",
    "bench",
]

_PREDICTOR_CORPUS_STREAM = 31


def validate_config(config_path: Path, seed: Optional[int] = None) -> List[str]:
    """
    校验配置文件，返回诊断列表（空列表表示合法）

    Raises:
        ConfigParseError: 文件无法解析（附行列号）
        OSError: 文件不可读
    """
    manager = get_config_manager()
    config = apply_seed_override(manager.load_config(config_path), seed)
    return manager.validate(config)


def load_settings(config_path: Path, seed: Optional[int] = None) -> ExperimentSettings:
    """读取并构造类型化配置，不合法时抛出 ConfigurationError"""
    manager = get_config_manager()
    config = apply_seed_override(manager.load_config(config_path), seed)
    return manager.build(config)


@dataclass
class PipelineState:
    """阶段之间传递的中间结果"""
    settings: ExperimentSettings
    task: Optional[SyntheticTask] = None
    checkpoint: Optional[ToyModel] = None
    session: Optional[TrainingSession] = None
    target_result: Optional[TrainResult] = None
    corpus_reports: List[SparsityReport] = field(default_factory=list)
    table: Optional[ComparisonTable] = None
    fleet: Optional[LayerPredictorFleet] = None
    bench_table: Optional[BenchTable] = None
    durations: Dict[str, float] = field(default_factory=dict)


class PipelineRunner:
    """
    流水线执行器

    参数:
        config_path: 实验配置文件
        out_dir: 输出目录
        seed: 覆盖配置中所有种子
        threads: 稀疏算子线程数
    """

    def __init__(self, config_path: Path, out_dir: Path, seed: Optional[int] = None,
                 threads: int = 1, show_progress: Optional[bool] = None):
        self.config_path = Path(config_path)
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.threads = threads
        self.show_progress = show_progress
        self.manifest: Optional[ExperimentManifest] = None
        self.state: Optional[PipelineState] = None

    def run(self) -> ExperimentManifest:
        # validate：在任何训练开始之前完成全部检查
        started = time.perf_counter()
        manager = get_config_manager()
        config = apply_seed_override(manager.load_config(self.config_path), self.seed)
        settings = manager.build(config)

        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = ExperimentManifest.start(self.config_path, get_module_versions(), settings.seed_list)
        self.manifest.stage_order.append("validate")
        self.manifest.record(write_json(self.out_dir / "config_resolved.json", config), "validate")
        self.state = PipelineState(settings=settings)
        self.state.durations["validate"] = time.perf_counter() - started
        logger.info("✓ 配置校验通过: %s (实验 %s)", self.config_path, self.manifest.experiment_id)

        stages: Dict[str, Callable[[PipelineState], None]] = {
            "pretrain": self._pretrain,
            "substitute": self._substitute,
            "regularize": self._regularize,
            "shift": self._shift,
            "measure": self._measure,
            "compare": self._compare,
            "predictors": self._predictors,
            "bench": self._bench,
        }
        try:
            for name in STAGE_ORDER[1:]:
                self._run_stage(name, stages[name])
        finally:
            if self.state.session is not None:
                self.state.session.close()

        self.manifest.record(self._write_summary(), "summary")
        manifest_path = self.out_dir / "manifest.json"
        self.manifest.record(manifest_path, "summary")
        self.manifest.finish()
        self.manifest.save(manifest_path)
        logger.info("✅ 流水线完成，输出目录: %s", self.out_dir)
        return self.manifest

    def _run_stage(self, name: str, stage: Callable[[PipelineState], None]) -> None:
        logger.info("▶ 阶段 %s", name)
        started = time.perf_counter()
        try:
            stage(self.state)
        except Exception as e:
            logger.error("❌ 阶段 %s 失败: %s", name, e)
            self.manifest.mark_failed(name, e)
            self.manifest.finish()
            manifest_path = self.out_dir / "manifest.json"
            self.manifest.record(manifest_path, name)
            self.manifest.save(manifest_path)
            raise StageError(name, e) from e
        self.state.durations[name] = time.perf_counter() - started
        self.manifest.stage_order.append(name)

    def _record(self, path: Path, stage: str) -> Path:
        return self.manifest.record(path, stage)

    def _record_model(self, model: ToyModel, name: str, stage: str, extra: Optional[Dict[str, Any]] = None) -> Path:
        path = save_model(model, self.out_dir / name, {"stage": stage, **(extra or {})})
        self._record(path.with_suffix(".bin"), stage)
        return self._record(path, stage)

    # ========================================
    # 阶段
    # ========================================

    def _pretrain(self, state: PipelineState) -> None:
        s = state.settings
        state.task = make_task(s.model, s.task, s.seeds.get("task", 0))
        target_cfg = s.train_config(s.target_method)
        state.checkpoint = pretrain(target_cfg, state.task, self.show_progress)
        self._record_model(state.checkpoint, "checkpoint_swish.json", "pretrain")

    def _substitute(self, state: PipelineState) -> None:
        s = state.settings
        target_cfg = s.train_config(s.target_method)
        state.session = TrainingSession(target_cfg, state.task, state.checkpoint, show_progress=self.show_progress)
        state.session.advance(target_cfg.resolved_substitution_steps, desc="substitute")

    def _regularize(self, state: PipelineState) -> None:
        state.session.advance(state.session.cfg.total_steps, desc="regularize")

    def _shift(self, state: PipelineState) -> None:
        result = state.session.finalize()
        state.target_result = result
        if result.sweep is not None:
            self._record(write_sweep_csv(result.sweep, self.out_dir / "threshold_sweep.csv"), "shift")
        self._record_model(result.model, "model_final.json", "shift", {"method": result.method.name})

    def _measure(self, state: PipelineState) -> None:
        result = state.target_result
        step = state.session.cfg.total_steps
        corpora = state.task.corpus_samples()
        reports = [measure(result.model, inputs, label=label, step=step) for label, inputs in corpora.items()]
        reports.append(merge_reports(reports, MIXED_LABEL))
        state.corpus_reports = reports
        self._record(write_sparsity_csv(reports, self.out_dir / "sparsity.csv"), "measure")

        series = []
        if result.pre_shift_report is not None and result.sweep is not None:
            series.append(layerwise_report(result.pre_shift_report, "pre_shift"))
            series.append(layerwise_report(result.final_report, "post_shift"))
        else:
            series.append(layerwise_report(result.final_report, "final"))
        self._record(write_layerwise_csv(series, self.out_dir / "layerwise.csv"), "measure")

    def _compare(self, state: PipelineState) -> None:
        s = state.settings
        configs = [s.train_config(m) for m in s.methods]
        configs += bias_sweep_configs(s.training, s.bias_sweep)
        probes = state.task.corpus_samples()
        state.table = compare_methods(
            configs,
            state.task,
            state.checkpoint,
            probe_corpora=probes,
            max_workers=s.max_workers,
            results={s.target: state.target_result},
        )
        histories = [r.history for r in state.table.results]
        self._record(write_history_csv(histories, self.out_dir / "history.csv"), "compare")
        self._record(write_comparison_csv(state.table, self.out_dir / "comparison.csv"), "compare")

    def _predictors(self, state: PipelineState) -> None:
        cfg = state.settings.predictor
        if not cfg.enabled:
            logger.info("⚠ 预测器阶段已在配置中关闭")
            return
        seed = state.settings.seeds.get("predictor", 0)
        corpus = state.task.sample_mixture(cfg.pairs, SeededRng(seed, _PREDICTOR_CORPUS_STREAM))
        state.fleet = train_layer_predictors(
            state.target_result.model, corpus, cfg, seed=seed, max_workers=state.settings.max_workers
        )
        self._record(write_predictor_csv(state.fleet.metrics, self.out_dir / "predictor_metrics.csv"), "predictors")

    def _bench(self, state: PipelineState) -> None:
        cfg = state.settings.bench
        if not cfg.enabled:
            logger.info("⚠ 基准测试阶段已在配置中关闭")
            return
        final_activation = state.target_result.model.activation
        if not final_activation.supports_sparse_kernels:
            raise ConfigurationError(
                f"❌ 主方法最终激活不支持稀疏算子 (unsupported activation for sparse kernels): {final_activation}",
                [f"unsupported activation for sparse kernels: {final_activation}"],
            )
        cfg = replace(cfg, activation=final_activation, threads=self.threads)
        state.bench_table = bench(cfg, show_progress=self.show_progress)
        self._record(write_bench_csv(state.bench_table, self.out_dir / "bench.csv"), "bench")

    # ========================================
    # 摘要
    # ========================================

    def _write_summary(self) -> Path:
        return write_json(self.out_dir / "summary.json", build_summary(self.state, self.manifest.stage_order))


def build_summary(state: PipelineState, stage_order: List[str]) -> Dict[str, Any]:
    """
    summary.json：所有数值都可以从CSV产物重新推导
    与计时相关的内容只放在 "timing" 下
    """
    s = state.settings
    result = state.target_result
    summary: Dict[str, Any] = {
        "experiment": s.name,
        "stage_order": list(stage_order),
        "seeds": dict(s.seeds),
        "target": {
            "method": s.target,
            "activation": str(result.model.activation),
            "threshold": result.chosen_threshold,
        },
    }
    if state.table is not None:
        summary["methods"] = {
            row.method: {"activation": row.activation, "lambda": row.lam, "sparsity": row.sparsity, "val_loss": row.val_loss}
            for row in state.table.rows
        }
    summary["corpus_sparsity"] = {r.corpus_label: r.average for r in state.corpus_reports}
    summary["layerwise"] = {"final": list(result.final_report.per_layer)}
    if result.pre_shift_report is not None and result.sweep is not None:
        summary["layerwise"]["pre_shift"] = list(result.pre_shift_report.per_layer)
    if state.fleet is not None:
        summary["predictor"] = {
            "mean_recall": state.fleet.mean_recall,
            "mean_predicted_sparsity": state.fleet.mean_predicted_sparsity,
        }

    timing: Dict[str, Any] = {"stage_seconds": dict(state.durations)}
    if state.bench_table is not None:
        timing["bench"] = [
            {"step": r.step, "sparsity": r.sparsity, "median_us": r.median_us, "speedup_vs_dense": r.speedup_vs_dense}
            for r in state.bench_table.rows
        ]
    summary["timing"] = timing
    return summary


def run_pipeline(config_path: Path, out_dir: Path, seed: Optional[int] = None, threads: int = 1,
                 show_progress: Optional[bool] = None) -> ExperimentManifest:
    """执行完整流水线，返回实验清单"""
    return PipelineRunner(config_path, out_dir, seed, threads, show_progress).run()
