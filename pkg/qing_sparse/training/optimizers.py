# -*- coding: utf-8 -*-
"""
优化器
SGD + 动量（默认0.9），可选权重衰减与全局梯度裁剪（默认关闭）
训练器与激活预测器共用同一实现
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Type

import numpy as np

from ..core.errors import ConfigurationError, NumericError, check_dims


@dataclass
class OptimizerConfig:
    """优化器配置（对应 training.optimizer 段）"""
    name: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    grad_clip: float = 0.0

    def diagnostics(self) -> List[str]:
        problems = []
        if self.name not in OPTIMIZERS:
            problems.append(
                f"training.optimizer.name: 未知优化器 '{self.name}'，可选: {', '.join(OPTIMIZERS)}"
            )
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"training.optimizer.momentum: 要求 0 ≤ momentum < 1，实际 {self.momentum}")
        if self.weight_decay < 0:
            problems.append(f"training.optimizer.weight_decay: 必须非负，实际 {self.weight_decay}")
        if self.grad_clip < 0:
            problems.append(f"training.optimizer.grad_clip: 必须非负（0表示关闭），实际 {self.grad_clip}")
        return problems

    def to_config(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "grad_clip": self.grad_clip,
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "OptimizerConfig":
        return cls(
            name=str(config.get("name", "sgd")).lower(),
            momentum=float(config.get("momentum", 0.9)),
            weight_decay=float(config.get("weight_decay", 0.0)),
            grad_clip=float(config.get("grad_clip", 0.0)),
        )


class SGDMomentum:
    """
    带动量的SGD，原地更新参数数组
    v ← μ·v + g (+ wd·p)，p ← p − lr·v
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self._velocity: List[np.ndarray] = []

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> float:
        """
        执行一次更新

        返回:
            裁剪前的全局梯度范数
        """
        check_dims(len(params), len(grads), "optimizer: 参数与梯度数量")
        if not self._velocity:
            self._velocity = [np.zeros_like(p) for p in params]

        norm = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads))
        if not math.isfinite(norm):
            raise NumericError(f"❌ 梯度出现非有限值 (non-finite gradient norm): {norm}")
        scale = 1.0
        if self.config.grad_clip > 0 and norm > self.config.grad_clip:
            scale = self.config.grad_clip / norm

        for p, g, v in zip(params, grads, self._velocity):
            update = g * scale if scale != 1.0 else g
            if self.config.weight_decay > 0:
                update = update + self.config.weight_decay * p
            v *= self.config.momentum
            v += update
            p -= lr * v
        return norm


# 优化器注册表；Adam 等可按相同接口扩展
OPTIMIZERS: Dict[str, Type[SGDMomentum]] = {
    "sgd": SGDMomentum,
}


def create_optimizer(config: OptimizerConfig) -> SGDMomentum:
    if config.name not in OPTIMIZERS:
        raise ConfigurationError(
            f"❌ 未知优化器: '{config.name}'\n✅ 可选: {', '.join(OPTIMIZERS)}",
            [f"training.optimizer.name: 未知优化器 '{config.name}'"],
        )
    return OPTIMIZERS[config.name](config)
