# -*- coding: utf-8 -*-
"""
合成教师-学生回归任务
- 冻结的随机 Swish 教师模型（与学生同结构）生成回归目标
- 多个集中度不同的合成语料（各向同性 / 原型簇），用于逐语料稀疏度分析
- 训练集、验证集与固定的探针语料均从各语料的等权混合中采样
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.activations import ActivationKind
from ..core.errors import ConfigurationError, RejectedInputError, check_dims
from ..core.gated_ffn import ModelConfig, ToyModel, forward_model, init_model
from ..core.numerics import TRAIN_DTYPE, SeededRng

logger = logging.getLogger(__name__)

MIXED_LABEL = "mixed"

# 随机流编号
_TASK_STREAM = 7
_TEACHER_STREAM = 0
_TRAIN_STREAM = 100
_VAL_STREAM = 101
_PROBE_STREAM = 102
_CORPUS_STREAM = 200


@dataclass
class CorpusSpec:
    """
    合成语料描述
    prototypes == 0 表示各向同性高斯；否则为 prototypes 个簇中心加 spread 倍的高斯噪声
    """
    label: str
    prototypes: int = 0
    spread: float = 1.0

    def to_config(self) -> Dict[str, Any]:
        return {"label": self.label, "prototypes": self.prototypes, "spread": self.spread}

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "CorpusSpec":
        return cls(
            label=str(config["label"]),
            prototypes=int(config.get("prototypes", 0)),
            spread=float(config.get("spread", 1.0)),
        )


def default_corpora() -> List[CorpusSpec]:
    return [
        CorpusSpec("plain_text", prototypes=0, spread=1.0),
        CorpusSpec("code", prototypes=16, spread=0.5),
        CorpusSpec("qa", prototypes=4, spread=0.1),
    ]


@dataclass
class TaskConfig:
    """任务配置（对应配置文件 task 段）"""
    train_samples: int = 4096
    val_samples: int = 512
    probe_samples: int = 256
    corpus_samples: int = 256
    teacher_init_scale: float = 1.0
    noise_std: float = 0.0
    corpora: List[CorpusSpec] = field(default_factory=default_corpora)

    def diagnostics(self) -> List[str]:
        problems = []
        for name in ("train_samples", "val_samples", "probe_samples", "corpus_samples"):
            if getattr(self, name) < 1:
                problems.append(f"task.{name}: 必须 ≥ 1，实际 {getattr(self, name)}")
        if self.teacher_init_scale <= 0:
            problems.append(f"task.teacher_init_scale: 必须为正数，实际 {self.teacher_init_scale}")
        if self.noise_std < 0:
            problems.append(f"task.noise_std: 必须非负，实际 {self.noise_std}")
        if not self.corpora:
            problems.append("task.corpora: 至少需要一个语料")
        labels = [c.label for c in self.corpora]
        if len(set(labels)) != len(labels):
            problems.append(f"task.corpora: 语料标签重复 {labels}")
        if MIXED_LABEL in labels:
            problems.append(f"task.corpora: 标签 '{MIXED_LABEL}' 保留给混合语料")
        for i, c in enumerate(self.corpora):
            if c.prototypes < 0 or c.spread <= 0:
                problems.append(f"task.corpora[{i}]: 要求 prototypes ≥ 0 且 spread > 0")
        return problems

    def to_config(self) -> Dict[str, Any]:
        return {
            "train_samples": self.train_samples,
            "val_samples": self.val_samples,
            "probe_samples": self.probe_samples,
            "corpus_samples": self.corpus_samples,
            "teacher_init_scale": self.teacher_init_scale,
            "noise_std": self.noise_std,
            "corpora": [c.to_config() for c in self.corpora],
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "TaskConfig":
        corpora = config.get("corpora")
        return cls(
            train_samples=int(config.get("train_samples", 4096)),
            val_samples=int(config.get("val_samples", 512)),
            probe_samples=int(config.get("probe_samples", 256)),
            corpus_samples=int(config.get("corpus_samples", 256)),
            teacher_init_scale=float(config.get("teacher_init_scale", 1.0)),
            noise_std=float(config.get("noise_std", 0.0)),
            corpora=[CorpusSpec.from_config(c) for c in corpora] if corpora else default_corpora(),
        )


class SyntheticCorpus:
    """单个合成语料的采样器，簇中心在构造时固定"""

    def __init__(self, spec: CorpusSpec, d_model: int, rng: SeededRng):
        self.spec = spec
        self.d_model = d_model
        self.centers: Optional[np.ndarray] = None
        if spec.prototypes > 0:
            self.centers = rng.normal(0.0, 1.0, size=(spec.prototypes, d_model))

    @property
    def label(self) -> str:
        return self.spec.label

    def sample(self, count: int, rng: SeededRng) -> np.ndarray:
        noise = rng.normal(0.0, self.spec.spread, size=(count, self.d_model))
        if self.centers is None:
            return np.ascontiguousarray(noise, dtype=TRAIN_DTYPE)
        picks = rng.integers(0, self.spec.prototypes, size=count)
        return np.ascontiguousarray(self.centers[picks] + noise, dtype=TRAIN_DTYPE)


@dataclass
class SyntheticTask:
    """一个完整的教师-学生任务实例"""
    teacher: ToyModel
    corpora: Dict[str, SyntheticCorpus]
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    probe: np.ndarray
    seed: int = 0
    config: TaskConfig = field(default_factory=TaskConfig)

    @property
    def d_model(self) -> int:
        return self.teacher.d_model

    def sample_mixture(self, count: int, rng: SeededRng) -> np.ndarray:
        """从各语料等权混合中采样 count 个输入"""
        return sample_mixture(list(self.corpora.values()), count, rng)

    def corpus_samples(self, count: Optional[int] = None) -> Dict[str, np.ndarray]:
        """逐语料的固定评估样本（同一任务多次调用结果相同）"""
        count = count or self.config.corpus_samples
        root = SeededRng(self.seed, _TASK_STREAM)
        return {
            label: corpus.sample(count, root.child(_CORPUS_STREAM + i))
            for i, (label, corpus) in enumerate(self.corpora.items())
        }

    def val_loss(self, model: ToyModel) -> float:
        """验证集上的平均逐样本均方误差"""
        return dataset_loss(model, self.val_x, self.val_y)


def sample_mixture(corpora: List[SyntheticCorpus], count: int, rng: SeededRng) -> np.ndarray:
    if not corpora:
        raise RejectedInputError("语料列表为空 (empty corpus list)")
    choice = rng.integers(0, len(corpora), size=count)
    out = np.empty((count, corpora[0].d_model), dtype=TRAIN_DTYPE)
    for i, corpus in enumerate(corpora):
        rows = np.flatnonzero(choice == i)
        if rows.size:
            out[rows] = corpus.sample(rows.size, rng)
    return out


def teacher_targets(teacher: ToyModel, inputs: np.ndarray) -> np.ndarray:
    return np.stack([forward_model(teacher, x)[0] for x in inputs])


def mse(output: np.ndarray, target: np.ndarray) -> float:
    """逐样本均方误差"""
    diff = output - target
    return float(np.mean(diff * diff))


def mse_grad(output: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (output - target) / output.shape[0]


def dataset_loss(model: ToyModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    check_dims(len(inputs), len(targets), "dataset_loss: 输入与目标数量")
    if len(inputs) == 0:
        raise RejectedInputError("dataset_loss: 数据集为空")
    total = sum(mse(forward_model(model, x)[0], y) for x, y in zip(inputs, targets))
    return total / len(inputs)


def make_task(model_cfg: ModelConfig, task_cfg: TaskConfig, seed: int) -> SyntheticTask:
    """
    构造任务：教师模型、语料、训练/验证集与探针语料
    相同 (model_cfg, task_cfg, seed) 总是得到逐位相同的任务
    """
    problems = task_cfg.diagnostics()
    if problems:
        raise ConfigurationError("❌ 任务配置无效\n" + "\n".join(problems), problems)

    root = SeededRng(seed, _TASK_STREAM)
    teacher_cfg = ModelConfig(
        d_model=model_cfg.d_model,
        d_ff=model_cfg.d_ff,
        num_layers=model_cfg.num_layers,
        output_dim=model_cfg.output_dim,
        activation=ActivationKind.swish(),
        init_scale=task_cfg.teacher_init_scale,
        seed=seed,
    )
    teacher = init_model(teacher_cfg, root.child(_TEACHER_STREAM))
    corpora = {
        spec.label: SyntheticCorpus(spec, model_cfg.d_model, root.child(i + 1))
        for i, spec in enumerate(task_cfg.corpora)
    }
    corpus_list = list(corpora.values())

    def labelled(count: int, stream: int):
        rng = root.child(stream)
        xs = sample_mixture(corpus_list, count, rng)
        ys = teacher_targets(teacher, xs)
        if task_cfg.noise_std > 0:
            ys = ys + rng.normal(0.0, task_cfg.noise_std, size=ys.shape)
        return xs, ys

    train_x, train_y = labelled(task_cfg.train_samples, _TRAIN_STREAM)
    val_x, val_y = labelled(task_cfg.val_samples, _VAL_STREAM)
    probe = sample_mixture(corpus_list, task_cfg.probe_samples, root.child(_PROBE_STREAM))
    logger.debug(
        "合成任务: train=%d, val=%d, probe=%d, corpora=%s",
        len(train_x), len(val_x), len(probe), ", ".join(corpora),
    )
    return SyntheticTask(
        teacher=teacher,
        corpora=corpora,
        train_x=train_x,
        train_y=train_y,
        val_x=val_x,
        val_y=val_y,
        probe=probe,
        seed=seed,
        config=task_cfg,
    )
