# -*- coding: utf-8 -*-
"""
测试公共夹具
小尺寸模型与流水线配置，保证默认测试集在几十秒内完成
"""

import json
from pathlib import Path

import numpy as np
import pytest

from qing_sparse.core.activations import ActivationKind
from qing_sparse.core.gated_ffn import GatedFFNLayer, ModelConfig, ToyModel, init_model
from qing_sparse.core.numerics import SeededRng
from qing_sparse.training.synthetic_data import CorpusSpec, TaskConfig

EXAMPLE_CONFIGS = Path(__file__).resolve().parent.parent / "example_configs"


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def small_model_cfg():
    return ModelConfig(d_model=6, d_ff=10, num_layers=2, output_dim=3)


@pytest.fixture
def small_model(small_model_cfg):
    return init_model(small_model_cfg, SeededRng(7))


@pytest.fixture
def tiny_task_cfg():
    return TaskConfig(
        train_samples=64,
        val_samples=16,
        probe_samples=16,
        corpus_samples=8,
        corpora=[CorpusSpec("plain_text"), CorpusSpec("qa", prototypes=2, spread=0.2)],
    )


def zero_layer(d_model: int, d_ff: int, activation: ActivationKind) -> GatedFFNLayer:
    return GatedFFNLayer(
        W_s=np.zeros((d_ff, d_model)),
        W_1=np.zeros((d_ff, d_model)),
        W_2=np.zeros((d_model, d_ff)),
        activation=activation,
    )


def zero_model(d_model: int, d_ff: int, num_layers: int, activation: ActivationKind) -> ToyModel:
    return ToyModel(
        layers=[zero_layer(d_model, d_ff, activation) for _ in range(num_layers)],
        head=np.eye(d_model),
    )


def tiny_pipeline_config(**overrides):
    """几秒内跑完的流水线配置"""
    config = {
        "experiment": {"name": "tiny", "max_workers": 1},
        "model": {"d_model": 4, "d_ff": 12, "num_layers": 2, "output_dim": 2, "init_scale": 1.0},
        "task": {
            "train_samples": 64,
            "val_samples": 16,
            "probe_samples": 16,
            "corpus_samples": 8,
            "corpora": [
                {"label": "plain_text", "prototypes": 0, "spread": 1.0},
                {"label": "qa", "prototypes": 2, "spread": 0.2},
            ],
        },
        "training": {
            "total_steps": 20,
            "pretrain_steps": 5,
            "substitution_steps": 4,
            "batch_size": 4,
            "eval_every": 5,
            "peak_lr": 0.02,
            "warmup_steps": 0,
        },
        "schedule": {
            "preset": None,
            "stages": [
                {"peak_lambda": 1e-3, "end_step": 8},
                {"peak_lambda": 5e-3, "end_step": 14},
                {"peak_lambda": 5e-3, "end_step": 20},
            ],
        },
        "methods": {
            "run": ["vanilla_relu", "fixed_l1", "progressive"],
            "target": "progressive",
        },
        "bias_sweep": {"enabled": True, "biases": [0.1, 0.5]},
        "threshold_sweep": {"candidates": [0.005, 0.01], "tolerance": 0.5},
        "predictor": {"enabled": True, "pairs": 40, "epochs": 2, "batch_size": 8},
        "bench": {
            "enabled": True,
            "d_model": 16,
            "d_ff": 64,
            "sparsity": [0.0, 0.5],
            "trials": 3,
            "warmup": 1,
        },
        "seeds": {"model": 0, "task": 0, "training": 0, "predictor": 0, "bench": 0},
    }
    for section, values in overrides.items():
        if isinstance(values, dict) and isinstance(config.get(section), dict):
            config[section] = {**config[section], **values}
        else:
            config[section] = values
    return config


def write_config(path: Path, config) -> Path:
    path.write_text(json.dumps(config, ensure_ascii=False, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def tiny_config_path(tmp_path):
    return write_config(tmp_path / "tiny.json", tiny_pipeline_config())
