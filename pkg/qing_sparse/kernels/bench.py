# -*- coding: utf-8 -*-
"""
稀疏算子基准测试
对每个稀疏度水平合成恰好 ⌈level·d_ff⌉ 个未通过门控的 z，
分别计时步骤(2)、步骤(3)的稀疏实现与稠密基准，报告 min / median / p90 与加速比
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numba
import numpy as np
from tqdm import tqdm

from ..core.activations import ActivationKind
from ..core.errors import ConfigurationError, RejectedInputError
from ..core.numerics import KERNEL_DTYPE, SeededRng
from ..utils.export_tools import write_csv
from ..utils.system_info import format_header_lines, get_system_info
from .sparse_kernels import (
    ColumnMajorWeights,
    dense_step2,
    dense_step3,
    gate_threshold,
    step2_fused_output_sparse,
    step3_input_sparse_matvec,
)

logger = logging.getLogger(__name__)

_WEIGHT_STREAM = 21
_PATTERN_STREAM = 22

STEP_NAMES = ["step2_dense", "step2_sparse", "step3_dense", "step3_sparse", "step3_dense_input"]


@dataclass
class BenchConfig:
    """基准测试配置（对应配置文件 bench 段）"""
    enabled: bool = True
    d_model: int = 1024
    d_ff: int = 4096
    sparsity: List[float] = field(default_factory=lambda: [0.0, 0.5, 0.7, 0.9, 0.95])
    trials: int = 200
    warmup: int = 10
    seed: int = 0
    threads: int = 1
    activation: ActivationKind = field(default_factory=ActivationKind.relu)

    def diagnostics(self) -> List[str]:
        problems = []
        if self.d_model < 1 or self.d_ff < 1:
            problems.append(f"bench: 维度必须 ≥ 1，实际 d_model={self.d_model}, d_ff={self.d_ff}")
        if not self.sparsity:
            problems.append("bench.sparsity: 稀疏度列表为空")
        for level in self.sparsity:
            if not 0.0 <= level < 1.0:
                problems.append(f"bench.sparsity: 稀疏度必须位于 [0, 1)，实际 {level}")
        if self.trials < 1:
            problems.append(f"bench.trials: 必须 ≥ 1，实际 {self.trials}")
        if self.warmup < 0:
            problems.append(f"bench.warmup: 必须非负，实际 {self.warmup}")
        if self.threads < 1:
            problems.append(f"bench.threads: 必须 ≥ 1，实际 {self.threads}")
        try:
            gate_threshold(self.activation)
        except ConfigurationError as e:
            problems.extend(e.diagnostics)
        return problems

    def to_config(self) -> Dict[str, Any]:
        return {
            "enabled": self.enabled,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "sparsity": list(self.sparsity),
            "trials": self.trials,
            "warmup": self.warmup,
            "seed": self.seed,
            "threads": self.threads,
            "activation": self.activation.to_config(),
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "BenchConfig":
        return cls(
            enabled=bool(config.get("enabled", True)),
            d_model=int(config.get("d_model", 1024)),
            d_ff=int(config.get("d_ff", 4096)),
            sparsity=[float(s) for s in config.get("sparsity", [0.0, 0.5, 0.7, 0.9, 0.95])],
            trials=int(config.get("trials", 200)),
            warmup=int(config.get("warmup", 10)),
            seed=int(config.get("seed", 0)),
            threads=int(config.get("threads", 1)),
            activation=ActivationKind.from_config(config.get("activation", "relu")),
        )


@dataclass
class BenchRow:
    step: str
    sparsity: float
    median_us: float
    min_us: float
    p90_us: float
    speedup_vs_dense: float


@dataclass
class BenchTable:
    rows: List[BenchRow]
    machine: Dict[str, Any]
    config: BenchConfig

    def row(self, step: str, sparsity: float) -> BenchRow:
        for r in self.rows:
            if r.step == step and r.sparsity == sparsity:
                return r
        raise KeyError((step, sparsity))

    def medians(self, step: str) -> List[float]:
        return [r.median_us for r in self.rows if r.step == step]


def synthesize_gate(d_ff: int, level: float, rng: SeededRng, activation: ActivationKind) -> np.ndarray:
    """
    合成门控分数 z：恰好 ⌈level·d_ff⌉ 个位置（随机、按种子）低于阈值，其余高于阈值
    """
    if not 0.0 <= level < 1.0:
        raise RejectedInputError(f"稀疏度必须位于 [0, 1)，实际 {level}")
    threshold, _ = gate_threshold(activation)
    inactive = math.ceil(level * d_ff)
    z = rng.uniform(threshold + 0.1, threshold + 1.0, size=d_ff)
    positions = rng.choice(d_ff, size=inactive, replace=False)
    z[positions] = rng.uniform(threshold - 1.0, threshold - 0.1, size=inactive)
    return z.astype(KERNEL_DTYPE)


def time_call(fn: Callable[[], Any], trials: int, warmup: int) -> np.ndarray:
    """预热后逐次计时（单调高精度时钟），返回微秒"""
    for _ in range(warmup):
        fn()
    samples = np.empty(trials, dtype=np.float64)
    for i in range(trials):
        start = time.perf_counter_ns()
        fn()
        samples[i] = (time.perf_counter_ns() - start) / 1000.0
    return samples


def _set_threads(threads: int) -> int:
    threads = max(1, min(threads, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(threads)
    return threads


def bench(cfg: BenchConfig, show_progress: Optional[bool] = None) -> BenchTable:
    """
    对每个稀疏度水平计时：
      step2_dense / step2_sparse：σ(z) ⊙ (W_1·x) 的稠密实现与融合稀疏算子
      step3_dense / step3_sparse：W_2·x_1 的稠密实现与输入侧稀疏算子
      step3_dense_input：输入侧稀疏算子直接读取带零稠密向量
    """
    problems = cfg.diagnostics()
    if problems:
        raise ConfigurationError("❌ 基准测试配置无效\n" + "\n".join(problems), problems)
    threads = _set_threads(cfg.threads)
    if show_progress is None:
        show_progress = logger.isEnabledFor(logging.INFO)

    weight_rng = SeededRng(cfg.seed, _WEIGHT_STREAM)
    scale = 1.0 / math.sqrt(cfg.d_model)
    W_1 = weight_rng.uniform(-scale, scale, size=(cfg.d_ff, cfg.d_model)).astype(KERNEL_DTYPE)
    W_2 = weight_rng.uniform(-scale, scale, size=(cfg.d_model, cfg.d_ff)).astype(KERNEL_DTYPE)
    x = weight_rng.normal(0.0, 1.0, size=cfg.d_model).astype(KERNEL_DTYPE)
    W1_cols = ColumnMajorWeights.from_w1(W_1)
    W2_cols = ColumnMajorWeights.from_w2(W_2)
    activation = cfg.activation

    rows: List[BenchRow] = []
    pattern_rng = SeededRng(cfg.seed, _PATTERN_STREAM)
    for i, level in enumerate(tqdm(cfg.sparsity, desc="bench", disable=not show_progress, leave=False)):
        z = synthesize_gate(cfg.d_ff, level, pattern_rng.child(i), activation)
        x1_sparse = step2_fused_output_sparse(z, W1_cols, x, activation)
        x1_dense = x1_sparse.to_dense()

        timings = {
            "step2_dense": time_call(lambda: dense_step2(z, W_1, x, activation), cfg.trials, cfg.warmup),
            "step2_sparse": time_call(
                lambda: step2_fused_output_sparse(z, W1_cols, x, activation, threads), cfg.trials, cfg.warmup
            ),
            "step3_dense": time_call(lambda: dense_step3(W_2, x1_dense), cfg.trials, cfg.warmup),
            "step3_sparse": time_call(
                lambda: step3_input_sparse_matvec(x1_sparse, W2_cols, threads), cfg.trials, cfg.warmup
            ),
            "step3_dense_input": time_call(
                lambda: step3_input_sparse_matvec(x1_dense, W2_cols), cfg.trials, cfg.warmup
            ),
        }
        medians = {name: float(np.median(samples)) for name, samples in timings.items()}
        for name in STEP_NAMES:
            samples = timings[name]
            dense_name = "step2_dense" if name.startswith("step2") else "step3_dense"
            rows.append(BenchRow(
                step=name,
                sparsity=float(level),
                median_us=medians[name],
                min_us=float(np.min(samples)),
                p90_us=float(np.percentile(samples, 90)),
                speedup_vs_dense=medians[dense_name] / medians[name],
            ))
        logger.info(
            "sparsity=%.2f: step2 %.1fus → %.1fus (×%.2f), step3 %.1fus → %.1fus (×%.2f)",
            level,
            medians["step2_dense"], medians["step2_sparse"], medians["step2_dense"] / medians["step2_sparse"],
            medians["step3_dense"], medians["step3_sparse"], medians["step3_dense"] / medians["step3_sparse"],
        )

    machine = get_system_info()
    machine.update({
        "bench_threads": threads,
        "d_model": cfg.d_model,
        "d_ff": cfg.d_ff,
        "trials": cfg.trials,
        "warmup": cfg.warmup,
        "activation": str(activation),
    })
    return BenchTable(rows=rows, machine=machine, config=cfg)


BENCH_CSV_HEADER = ["step", "sparsity", "median_us", "min_us", "p90_us", "speedup_vs_dense"]


def write_bench_csv(table: BenchTable, path: Path) -> Path:
    rows = [(r.step, r.sparsity, r.median_us, r.min_us, r.p90_us, r.speedup_vs_dense) for r in table.rows]
    return write_csv(path, BENCH_CSV_HEADER, rows, comments=format_header_lines(table.machine))


def bench_levels(values: Sequence[str]) -> List[float]:
    """解析命令行的稀疏度列表，如 "0.0,0.5,0.9" """
    levels = []
    for item in values:
        for part in str(item).split(","):
            if part.strip():
                levels.append(float(part))
    return levels
