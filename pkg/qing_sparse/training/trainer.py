# -*- coding: utf-8 -*-
"""
训练器
- Swish 预训练检查点
- 激活函数替换 → (渐进式) L1 正则训练 → 阈值平移
- 所有基线共享同一预训练检查点、同一批次序列和相同的优化步数
- 训练历史（按评估步记录稀疏度/损失/λ/学习率）与方法对比表
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..core.activations import ActivationKind
from ..core.errors import ConfigurationError, DivergenceError, NumericError, RejectedInputError
from ..core.gated_ffn import ModelConfig, ParamGrads, ToyModel, backward_model, forward_model, init_model
from ..core.numerics import SeededRng
from ..utils.export_tools import write_csv
from .method_framework import FinalizeResult, MethodConfig, MethodType, create_adapter
from .optimizers import OptimizerConfig, create_optimizer
from .regularization import LrSchedule, lr_at
from .sparsity_metrics import SparsityReport, ThresholdSweepResult, measure
from .synthetic_data import SyntheticTask, TaskConfig, make_task, mse, mse_grad

logger = logging.getLogger(__name__)

# 随机流编号
_INIT_STREAM = 1
_PRETRAIN_STREAM = 2
_BATCH_STREAM = 3


@dataclass
class TrainConfig:
    """单次训练配置"""
    method: MethodConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    total_steps: int = 2000
    pretrain_steps: int = 1000
    substitution_steps: Optional[int] = None
    batch_size: int = 16
    eval_every: int = 50
    peak_lr: float = 0.05
    warmup_steps: Optional[int] = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    max_workers: int = 1

    @property
    def resolved_substitution_steps(self) -> int:
        """替换阶段步数，默认总步数的20%"""
        if self.substitution_steps is None:
            return int(round(0.2 * self.total_steps))
        return self.substitution_steps

    def lr_schedule(self) -> LrSchedule:
        if self.warmup_steps is None:
            return LrSchedule.with_default_warmup(self.peak_lr, self.total_steps)
        return LrSchedule(self.peak_lr, self.total_steps, self.warmup_steps)

    def diagnostics(self) -> List[str]:
        problems = []
        for name in ("total_steps", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                problems.append(f"training.{name}: 必须 ≥ 1，实际 {getattr(self, name)}")
        if self.pretrain_steps < 0:
            problems.append(f"training.pretrain_steps: 必须非负，实际 {self.pretrain_steps}")
        if self.max_workers < 1:
            problems.append(f"training.max_workers: 必须 ≥ 1，实际 {self.max_workers}")
        sub = self.resolved_substitution_steps
        if sub < 0 or sub >= self.total_steps:
            problems.append(
                f"training.substitution_steps: 要求 0 ≤ substitution_steps < total_steps，实际 {sub} / {self.total_steps}"
            )
        if self.peak_lr <= 0:
            problems.append(f"training.peak_lr: 必须为正数，实际 {self.peak_lr}")
        if self.warmup_steps is not None and not 0 <= self.warmup_steps < self.total_steps:
            problems.append(
                f"training.warmup_steps: 要求 0 ≤ warmup_steps < total_steps，实际 {self.warmup_steps}"
            )
        problems.extend(self.optimizer.diagnostics())
        problems.extend(self.task.diagnostics())
        try:
            problems.extend(create_adapter(self.method, sub, self.total_steps).diagnostics())
        except ConfigurationError as e:
            problems.extend(e.diagnostics or [str(e)])
        return problems


@dataclass
class HistoryRecord:
    """一个评估步的记录"""
    step: int
    sparsity: float
    train_loss: float
    task_loss: float
    l1_sum: float
    val_loss: float
    lam: float
    lr: float


@dataclass
class TrainHistory:
    """训练历史，步数严格递增"""
    method: str
    records: List[HistoryRecord] = field(default_factory=list)
    updates: int = 0

    def append(self, record: HistoryRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise RejectedInputError(f"历史记录步数必须严格递增: {self.records[-1].step} → {record.step}")
        self.records.append(record)

    @property
    def steps(self) -> List[int]:
        return [r.step for r in self.records]

    @property
    def sparsity(self) -> List[float]:
        return [r.sparsity for r in self.records]

    @property
    def lambdas(self) -> List[float]:
        return [r.lam for r in self.records]


@dataclass
class TrainResult:
    """训练结果：最终模型、历史及探针语料上的最终评估"""
    method: MethodConfig
    model: ToyModel
    history: TrainHistory
    final_report: SparsityReport
    final_val_loss: float
    pre_shift_model: Optional[ToyModel] = None
    pre_shift_report: Optional[SparsityReport] = None
    pre_shift_val_loss: Optional[float] = None
    sweep: Optional[ThresholdSweepResult] = None
    corpus_reports: Dict[str, SparsityReport] = field(default_factory=dict)

    @property
    def chosen_threshold(self) -> Optional[float]:
        return self.sweep.chosen if self.sweep else None


def substitute_activation(model: ToyModel, new_kind: ActivationKind) -> ToyModel:
    """激活函数替换：权重不变（拷贝），所有层换成新激活；输入模型不受影响"""
    return model.with_activation(new_kind)


def _sample_grads(model: ToyModel, x: np.ndarray, y: np.ndarray, lam: float) -> Tuple[ParamGrads, float, float]:
    output, trace = forward_model(model, x)
    task_loss = mse(output, y)
    l1_sum = math.fsum(float(np.abs(layer.x1).sum()) for layer in trace.layers)
    grads = backward_model(model, trace, mse_grad(output, y), reg=lam)
    return grads, task_loss, l1_sum


class TrainingSession:
    """
    可分段推进的训练过程
    流水线按阶段调用 advance()，一次性训练由 run() 调用；两者执行完全相同的更新序列
    """

    def __init__(self, cfg: TrainConfig, task: SyntheticTask, start_model: ToyModel,
                 rng: Optional[SeededRng] = None, show_progress: Optional[bool] = None):
        problems = cfg.diagnostics()
        if problems:
            raise ConfigurationError("❌ 训练配置无效\n" + "\n".join(problems), problems)
        self.cfg = cfg
        self.task = task
        self.adapter = create_adapter(cfg.method, cfg.resolved_substitution_steps, cfg.total_steps)
        self.model = substitute_activation(start_model, self.adapter.training_activation())
        self.optimizer = create_optimizer(cfg.optimizer)
        self.lr_schedule = cfg.lr_schedule()
        self.rng = rng or SeededRng(cfg.seed, _BATCH_STREAM)
        self.history = TrainHistory(method=cfg.method.name)
        self.step = 0
        if show_progress is None:
            show_progress = logger.isEnabledFor(logging.INFO)
        self.show_progress = show_progress
        self._pool: Optional[ThreadPoolExecutor] = None
        if cfg.max_workers > 1:
            self._pool = ThreadPoolExecutor(max_workers=cfg.max_workers)

    def __enter__(self) -> "TrainingSession":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def close(self) -> None:
        """关闭梯度线程池；可重复调用"""
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _batch_grads(self, xs: np.ndarray, ys: np.ndarray, lam: float) -> List[Tuple[ParamGrads, float, float]]:
        if self._pool is None:
            return [_sample_grads(self.model, x, y, lam) for x, y in zip(xs, ys)]
        # map 保持输入顺序，梯度按批次顺序归约
        return list(self._pool.map(lambda xy: _sample_grads(self.model, xy[0], xy[1], lam), zip(xs, ys)))

    def train_step(self, t: int) -> HistoryRecord:
        """执行第t步更新（1开始），返回不含验证指标的记录"""
        lam = self.adapter.lambda_at_step(t)
        lr = lr_at(self.lr_schedule, t)
        idx = self.rng.integers(0, len(self.task.train_x), size=self.cfg.batch_size)
        results = self._batch_grads(self.task.train_x[idx], self.task.train_y[idx], lam)

        grads = results[0][0]
        for sample_grads, _, _ in results[1:]:
            grads.add_(sample_grads)
        grads.scale_(1.0 / len(results))
        task_loss = math.fsum(r[1] for r in results) / len(results)
        l1_sum = math.fsum(r[2] for r in results) / len(results)
        train_loss = task_loss + lam * l1_sum
        if not math.isfinite(train_loss):
            raise DivergenceError(t, lam, f"task_loss={task_loss}, l1_sum={l1_sum}, lr={lr:.6g}")

        params = [array for _, array in self.model.parameter_arrays()]
        try:
            self.optimizer.step(params, [g for _, g in grads.arrays()], lr)
        except NumericError as e:
            # 损失有限但梯度溢出
            raise DivergenceError(t, lam, f"{e}, lr={lr:.6g}") from e
        self.model.mark_updated()
        self.history.updates += 1
        self.step = t
        return HistoryRecord(t, float("nan"), train_loss, task_loss, l1_sum, float("nan"), lam, lr)

    def evaluate(self, record: HistoryRecord) -> HistoryRecord:
        report = measure(self.model, self.task.probe, label="probe", step=record.step)
        return replace(record, sparsity=report.average, val_loss=self.task.val_loss(self.model))

    def advance(self, until_step: int, desc: Optional[str] = None) -> TrainHistory:
        """训练到第 until_step 步（含）"""
        if until_step > self.cfg.total_steps or until_step < self.step:
            raise RejectedInputError(
                f"步数越界 (t out of range): until_step={until_step}，当前 {self.step}，总步数 {self.cfg.total_steps}"
            )
        steps = range(self.step + 1, until_step + 1)
        with tqdm(steps, desc=desc or self.cfg.method.name, disable=not self.show_progress, leave=False) as bar:
            for t in bar:
                record = self.train_step(t)
                if t % self.cfg.eval_every == 0 or t == self.cfg.total_steps:
                    record = self.evaluate(record)
                    self.history.append(record)
                    bar.set_postfix(sparsity=f"{record.sparsity:.3f}", lam=f"{record.lam:.3g}")
        return self.history

    def finalize(self) -> TrainResult:
        """收尾（阈值平移等），并在探针语料上评估最终模型"""
        if self.step != self.cfg.total_steps:
            raise RejectedInputError(f"训练尚未完成: {self.step}/{self.cfg.total_steps}")
        self.close()

        finished: FinalizeResult = self.adapter.finalize(self.model, self.task)
        final_report = measure(finished.model, self.task.probe, label="probe", step=self.step)
        result = TrainResult(
            method=self.cfg.method,
            model=finished.model,
            history=self.history,
            final_report=final_report,
            final_val_loss=self.task.val_loss(finished.model),
            sweep=finished.sweep,
        )
        if finished.pre_shift_model is not None:
            result.pre_shift_model = finished.pre_shift_model
            result.pre_shift_report = measure(finished.pre_shift_model, self.task.probe, label="probe", step=self.step)
            result.pre_shift_val_loss = self.task.val_loss(finished.pre_shift_model)
        logger.info(
            "✓ %s 训练完成: 平均稀疏度 %.4f, 验证损失 %.6g",
            self.cfg.method.name, final_report.average, result.final_val_loss,
        )
        return result


def initial_model(cfg: TrainConfig) -> ToyModel:
    """学生模型初始化（Swish）"""
    model_cfg = replace(cfg.model, activation=ActivationKind.swish())
    return init_model(model_cfg, SeededRng(cfg.model.seed, _INIT_STREAM))


def pretrain(cfg: TrainConfig, task: SyntheticTask, show_progress: Optional[bool] = None) -> ToyModel:
    """
    Swish 预训练检查点
    所有方法都从该检查点出发继续训练
    """
    model = initial_model(cfg)
    if cfg.pretrain_steps == 0:
        return model
    pre_cfg = replace(
        cfg,
        method=MethodConfig.original(),
        total_steps=cfg.pretrain_steps,
        substitution_steps=0,
        warmup_steps=None,
        eval_every=cfg.pretrain_steps,
    )
    with TrainingSession(pre_cfg, task, model, SeededRng(cfg.seed, _PRETRAIN_STREAM), show_progress) as session:
        session.advance(cfg.pretrain_steps, desc="pretrain")
    logger.info("✓ Swish 预训练完成: %d 步, 验证损失 %.6g", cfg.pretrain_steps, task.val_loss(session.model))
    return session.model


def run(
    cfg: TrainConfig,
    rng: Optional[SeededRng] = None,
    task: Optional[SyntheticTask] = None,
    start_model: Optional[ToyModel] = None,
    show_progress: Optional[bool] = None,
) -> TrainResult:
    """
    完整训练一个方法

    参数:
        rng: 批次采样随机流，默认由 cfg.seed 派生（各方法相同）
        task: 合成任务，默认按配置构造
        start_model: Swish 检查点，默认按配置预训练
    """
    problems = cfg.diagnostics()
    if problems:
        raise ConfigurationError("❌ 训练配置无效\n" + "\n".join(problems), problems)
    if task is None:
        task = make_task(cfg.model, cfg.task, cfg.seed)
    if start_model is None:
        start_model = pretrain(cfg, task, show_progress)
    with TrainingSession(cfg, task, start_model, rng, show_progress) as session:
        session.advance(cfg.total_steps)
        return session.finalize()


# ========================================
# 方法对比
# ========================================

@dataclass
class ComparisonRow:
    """对比表的一行"""
    method: str
    activation: str
    lam: float
    sparsity: float
    val_loss: float
    corpus_sparsity: Dict[str, float] = field(default_factory=dict)


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow]
    results: List[TrainResult]
    corpus_labels: List[str] = field(default_factory=list)

    def row(self, method: str) -> ComparisonRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def _run_for_compare(cfg: TrainConfig, task: SyntheticTask, start_model: ToyModel) -> TrainResult:
    return run(cfg, task=task, start_model=start_model, show_progress=False)


def _check_comparable(configs: Sequence[TrainConfig]) -> None:
    base = configs[0]
    for cfg in configs[1:]:
        for name in ("total_steps", "batch_size", "seed", "substitution_steps"):
            if getattr(cfg, name) != getattr(base, name):
                raise ConfigurationError(
                    f"❌ 对比的配置必须共享 {name}: {getattr(base, name)} vs {getattr(cfg, name)}",
                    [f"compare: 配置之间 {name} 不一致"],
                )


def _lambda_of(cfg: TrainConfig) -> float:
    adapter = create_adapter(cfg.method, cfg.resolved_substitution_steps, cfg.total_steps)
    return adapter.lambda_label()


def compare_methods(
    configs: Sequence[TrainConfig],
    task: SyntheticTask,
    start_model: ToyModel,
    probe_corpora: Optional[Dict[str, np.ndarray]] = None,
    max_workers: int = 1,
    results: Optional[Dict[str, TrainResult]] = None,
) -> ComparisonTable:
    """
    训练并对比多个方法

    参数:
        configs: 共享任务、步数与种子策略的训练配置
        probe_corpora: 额外的逐语料探针 {label: inputs}
        max_workers: >1 时各配置在独立进程中并行训练
        results: 已经训练好的结果（按方法名），直接复用
    """
    if not configs:
        raise RejectedInputError("compare_methods 需要至少一个配置")
    _check_comparable(configs)
    results = dict(results or {})
    pending = [cfg for cfg in configs if cfg.method.name not in results]

    if max_workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run_for_compare, cfg, task, start_model) for cfg in pending]
            for cfg, future in zip(pending, futures):
                results[cfg.method.name] = future.result()
    else:
        for cfg in pending:
            results[cfg.method.name] = run(cfg, task=task, start_model=start_model)

    probe_corpora = probe_corpora or {}
    rows: List[ComparisonRow] = []
    ordered: List[TrainResult] = []
    for cfg in configs:
        result = results[cfg.method.name]
        ordered.append(result)
        for label, corpus in probe_corpora.items():
            result.corpus_reports[label] = measure(result.model, corpus, label=label, step=cfg.total_steps)
        lam = _lambda_of(cfg)
        if result.pre_shift_model is not None and cfg.method.method_type is MethodType.PROGRESSIVE:
            rows.append(ComparisonRow(
                method=f"{cfg.method.name}_noshift",
                activation=str(result.pre_shift_model.activation),
                lam=lam,
                sparsity=result.pre_shift_report.average,
                val_loss=result.pre_shift_val_loss,
                corpus_sparsity={
                    label: measure(result.pre_shift_model, corpus, label=label).average
                    for label, corpus in probe_corpora.items()
                },
            ))
        rows.append(ComparisonRow(
            method=cfg.method.name,
            activation=str(result.model.activation),
            lam=lam,
            sparsity=result.final_report.average,
            val_loss=result.final_val_loss,
            corpus_sparsity={label: r.average for label, r in result.corpus_reports.items()},
        ))
    return ComparisonTable(rows=rows, results=ordered, corpus_labels=list(probe_corpora))


def bias_sweep_configs(base: TrainConfig, biases: Sequence[float]) -> List[TrainConfig]:
    """Shifted ReLU 偏置扫描配置"""
    return [
        replace(base, method=MethodConfig.shifted_relu(b, name=f"shifted_relu_b{b:g}"))
        for b in biases
    ]


# ========================================
# 输出
# ========================================

HISTORY_CSV_HEADER = ["method", "step", "sparsity", "train_loss", "task_loss", "l1_sum", "val_loss", "lambda", "lr"]


def write_history_csv(histories: Sequence[TrainHistory], path: Path) -> Path:
    rows = []
    for history in histories:
        for r in history.records:
            rows.append((history.method, r.step, r.sparsity, r.train_loss, r.task_loss, r.l1_sum, r.val_loss, r.lam, r.lr))
    return write_csv(path, HISTORY_CSV_HEADER, rows)


def write_comparison_csv(table: ComparisonTable, path: Path) -> Path:
    header = ["method", "activation", "lambda", "sparsity", "val_loss"]
    header += [f"sparsity_{label}" for label in table.corpus_labels]
    rows = []
    for r in table.rows:
        rows.append([r.method, r.activation, r.lam, r.sparsity, r.val_loss]
                    + [r.corpus_sparsity.get(label, "") for label in table.corpus_labels])
    return write_csv(path, header, rows)


def result_summary(result: TrainResult) -> Dict[str, Any]:
    """单次训练的摘要（train 命令的 summary.json）"""
    summary: Dict[str, Any] = {
        "method": result.method.name,
        "activation": str(result.model.activation),
        "updates": result.history.updates,
        "sparsity": result.final_report.average,
        "per_layer": list(result.final_report.per_layer),
        "val_loss": result.final_val_loss,
        "threshold": result.chosen_threshold,
    }
    if result.pre_shift_report is not None:
        summary["pre_shift_sparsity"] = result.pre_shift_report.average
        summary["pre_shift_val_loss"] = result.pre_shift_val_loss
    return summary
