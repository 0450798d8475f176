# -*- coding: utf-8 -*-
"""
门控FFN模块
- GatedFFNLayer: 单个门控FFN块  FFN(x) = (σ(x·W_sᵀ) ⊙ x·W_1ᵀ)·W_2ᵀ
- ToyModel: K层残差堆叠 + 线性输出头（不含注意力与归一化）
- 前向传播（记录 z / s / u / x_1）与手工推导的反向传播
"""

import copy
import itertools
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .activations import ActivationKind, apply, derivative
from .errors import RejectedInputError, check_dims
from .numerics import (
    TRAIN_DTYPE,
    SeededRng,
    as_matrix,
    load_tensors,
    matvec,
    matvec_transposed,
    save_tensors,
)


@dataclass
class ModelConfig:
    """模型配置（对应配置文件 model 段）"""
    d_model: int = 32
    d_ff: int = 128
    num_layers: int = 2
    output_dim: int = 8
    activation: ActivationKind = field(default_factory=ActivationKind.swish)
    init_scale: float = 1.0
    seed: int = 0

    def to_config(self) -> Dict[str, Any]:
        return {
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "num_layers": self.num_layers,
            "output_dim": self.output_dim,
            "activation": self.activation.to_config(),
            "init_scale": self.init_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ModelConfig":
        return cls(
            d_model=int(config["d_model"]),
            d_ff=int(config["d_ff"]),
            num_layers=int(config["num_layers"]),
            output_dim=int(config["output_dim"]),
            activation=ActivationKind.from_config(config.get("activation", "swish")),
            init_scale=float(config.get("init_scale", 1.0)),
            seed=int(config.get("seed", 0)),
        )


@dataclass
class GatedFFNLayer:
    """单个门控FFN块：W_s, W_1 ∈ (d_ff × d_model)，W_2 ∈ (d_model × d_ff)"""
    W_s: np.ndarray
    W_1: np.ndarray
    W_2: np.ndarray
    activation: ActivationKind

    def __post_init__(self):
        if self.W_s.shape != self.W_1.shape:
            raise RejectedInputError(f"W_s 与 W_1 形状必须一致: {self.W_s.shape} vs {self.W_1.shape}")
        if self.W_2.shape != self.W_1.shape[::-1]:
            raise RejectedInputError(f"W_2 形状必须为 W_1 的转置形状: {self.W_2.shape} vs {self.W_1.shape}")
        if self.W_1.ndim != 2 or min(self.W_1.shape) < 1:
            raise RejectedInputError(f"权重形状无效: {self.W_1.shape}")

    @property
    def d_ff(self) -> int:
        return self.W_1.shape[0]

    @property
    def d_model(self) -> int:
        return self.W_1.shape[1]

    def astype(self, dtype) -> "GatedFFNLayer":
        return GatedFFNLayer(
            W_s=np.ascontiguousarray(self.W_s, dtype=dtype),
            W_1=np.ascontiguousarray(self.W_1, dtype=dtype),
            W_2=np.ascontiguousarray(self.W_2, dtype=dtype),
            activation=self.activation,
        )


@dataclass
class LayerTrace:
    """单层前向记录：层输入x、门控前分数z、门控分数s、上投影u、中间输出x_1"""
    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    u: np.ndarray
    x1: np.ndarray


@dataclass
class ForwardTrace:
    """整个模型的前向记录"""
    layers: List[LayerTrace]
    final_hidden: np.ndarray
    output: np.ndarray
    model_token: Tuple[int, int] = (0, 0)
    model_version: int = 0


@dataclass
class ParamGrads:
    """参数梯度，顺序与 ToyModel.parameter_arrays() 一致"""
    W_s: List[np.ndarray]
    W_1: List[np.ndarray]
    W_2: List[np.ndarray]
    head: np.ndarray

    def arrays(self) -> List[Tuple[str, np.ndarray]]:
        items = []
        for i in range(len(self.W_s)):
            items.append((f"layers.{i}.W_s", self.W_s[i]))
            items.append((f"layers.{i}.W_1", self.W_1[i]))
            items.append((f"layers.{i}.W_2", self.W_2[i]))
        items.append(("head", self.head))
        return items

    def flatten(self) -> np.ndarray:
        return np.concatenate([g.reshape(-1) for _, g in self.arrays()])

    def scale_(self, factor: float) -> "ParamGrads":
        for _, g in self.arrays():
            g *= factor
        return self

    def add_(self, other: "ParamGrads") -> "ParamGrads":
        for (_, g), (_, o) in zip(self.arrays(), other.arrays()):
            g += o
        return self


# 模型实例标识（进程号, 序号），对象回收后不会复用
_MODEL_TOKENS = itertools.count(1)


def _next_model_token() -> Tuple[int, int]:
    return os.getpid(), next(_MODEL_TOKENS)


@dataclass
class ToyModel:
    """K层门控FFN残差堆叠 + 线性输出头"""
    layers: List[GatedFFNLayer]
    head: np.ndarray
    residual: bool = True
    version: int = 0
    token: Tuple[int, int] = field(default_factory=_next_model_token, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise RejectedInputError("模型至少需要一层 (K ≥ 1)")
        d_model = self.layers[0].d_model
        for i, layer in enumerate(self.layers):
            check_dims(d_model, layer.d_model, f"layers[{i}].d_model")
        check_dims(d_model, self.head.shape[1], "head.cols")

    @property
    def d_model(self) -> int:
        return self.layers[0].d_model

    @property
    def d_ff(self) -> int:
        return self.layers[0].d_ff

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.head.shape[0]

    @property
    def activation(self) -> ActivationKind:
        return self.layers[0].activation

    def mark_updated(self) -> None:
        """参数原地更新后调用，使旧的前向记录失效"""
        self.version += 1

    def parameter_arrays(self) -> List[Tuple[str, np.ndarray]]:
        items = []
        for i, layer in enumerate(self.layers):
            items.append((f"layers.{i}.W_s", layer.W_s))
            items.append((f"layers.{i}.W_1", layer.W_1))
            items.append((f"layers.{i}.W_2", layer.W_2))
        items.append(("head", self.head))
        return items

    def num_parameters(self) -> int:
        return int(sum(a.size for _, a in self.parameter_arrays()))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for _, a in self.parameter_arrays()])

    def load_flat_parameters(self, flat: np.ndarray) -> "ToyModel":
        """返回使用给定扁平参数的新模型（用于梯度检查）"""
        check_dims(self.num_parameters(), flat.size, "flat parameter length")
        model = self.copy()
        offset = 0
        for _, array in model.parameter_arrays():
            array[...] = flat[offset:offset + array.size].reshape(array.shape)
            offset += array.size
        return model

    def copy(self) -> "ToyModel":
        return ToyModel(
            layers=[copy.deepcopy(layer) for layer in self.layers],
            head=self.head.copy(),
            residual=self.residual,
        )

    def with_activation(self, kind: ActivationKind) -> "ToyModel":
        """相同权重（拷贝）、替换所有层的激活函数"""
        model = self.copy()
        for layer in model.layers:
            layer.activation = kind
        return model

    def astype(self, dtype) -> "ToyModel":
        return ToyModel(
            layers=[layer.astype(dtype) for layer in self.layers],
            head=np.ascontiguousarray(self.head, dtype=dtype),
            residual=self.residual,
        )


def forward_layer(layer: GatedFFNLayer, x: np.ndarray) -> Tuple[np.ndarray, LayerTrace]:
    """
    单层前向
    z = W_s·x，s = σ(z)，u = W_1·x，x_1 = s ⊙ u，out = W_2·x_1
    返回的 out 不含残差，残差由 forward_model 负责
    """
    check_dims(layer.d_model, x.shape[0], "forward_layer: x.len vs d_model")
    z = matvec(layer.W_s, x)
    s = apply(layer.activation, z)
    u = matvec(layer.W_1, x)
    x1 = s * u
    out = matvec(layer.W_2, x1)
    return out, LayerTrace(x=x, z=z, s=s, u=u, x1=x1)


def forward_model(model: ToyModel, x: np.ndarray) -> Tuple[np.ndarray, ForwardTrace]:
    """逐层残差前向，最后经过输出头"""
    check_dims(model.d_model, x.shape[0], "forward_model: x.len vs d_model")
    h = np.ascontiguousarray(x, dtype=model.head.dtype)
    traces = []
    for layer in model.layers:
        out, trace = forward_layer(layer, h)
        traces.append(trace)
        h = h + out if model.residual else out
    output = matvec(model.head, h)
    return output, ForwardTrace(
        layers=traces,
        final_hidden=h,
        output=output,
        model_token=model.token,
        model_version=model.version,
    )


def backward_model(
    model: ToyModel,
    trace: ForwardTrace,
    output_grad: np.ndarray,
    reg: Union[float, Sequence[float]] = 0.0,
) -> ParamGrads:
    """
    手工反向传播

    参数:
        output_grad: 损失对模型输出的梯度
        reg: 每层的L1系数λ（标量则所有层相同），x_1 处的梯度额外加上 λ·sign(x_1)，sign(0)=0

    返回:
        ParamGrads
    """
    if trace.model_token != model.token or trace.model_version != model.version:
        raise RejectedInputError("前向记录已过期或与模型不匹配 (stale or mismatched trace)")
    if len(trace.layers) != model.num_layers:
        raise RejectedInputError(f"前向记录层数不匹配: {len(trace.layers)} vs {model.num_layers}")
    check_dims(model.output_dim, output_grad.shape[0], "backward_model: output_grad.len")

    lambdas = [float(reg)] * model.num_layers if np.isscalar(reg) else [float(v) for v in reg]
    check_dims(model.num_layers, len(lambdas), "backward_model: reg 长度")

    grad_head = np.outer(output_grad, trace.final_hidden)
    g_h = matvec_transposed(model.head, output_grad)

    grads_s: List[np.ndarray] = [None] * model.num_layers
    grads_1: List[np.ndarray] = [None] * model.num_layers
    grads_2: List[np.ndarray] = [None] * model.num_layers
    for i in reversed(range(model.num_layers)):
        layer, lt = model.layers[i], trace.layers[i]
        grads_2[i] = np.outer(g_h, lt.x1)
        g_x1 = matvec_transposed(layer.W_2, g_h)
        if lambdas[i] != 0.0:
            g_x1 = g_x1 + lambdas[i] * np.sign(lt.x1)
        g_z = g_x1 * lt.u * derivative(layer.activation, lt.z)
        g_u = g_x1 * lt.s
        grads_s[i] = np.outer(g_z, lt.x)
        grads_1[i] = np.outer(g_u, lt.x)
        g_in = matvec_transposed(layer.W_s, g_z) + matvec_transposed(layer.W_1, g_u)
        g_h = g_h + g_in if model.residual else g_in
    return ParamGrads(W_s=grads_s, W_1=grads_1, W_2=grads_2, head=grad_head)


def init_model(cfg: ModelConfig, rng: SeededRng) -> ToyModel:
    """均匀初始化：所有权重取自 [−init_scale/√d_model, +init_scale/√d_model]"""
    if cfg.init_scale <= 0:
        raise RejectedInputError(f"init_scale 必须为正数，实际: {cfg.init_scale}")
    bound = cfg.init_scale / np.sqrt(cfg.d_model)

    def draw(rows: int, cols: int) -> np.ndarray:
        return as_matrix(rng.uniform(-bound, bound, size=(rows, cols)), dtype=TRAIN_DTYPE)

    layers = []
    for _ in range(cfg.num_layers):
        layers.append(
            GatedFFNLayer(
                W_s=draw(cfg.d_ff, cfg.d_model),
                W_1=draw(cfg.d_ff, cfg.d_model),
                W_2=draw(cfg.d_model, cfg.d_ff),
                activation=cfg.activation,
            )
        )
    return ToyModel(layers=layers, head=draw(cfg.output_dim, cfg.d_model))


# ========================================
# 模型保存/加载（张量清单格式）
# ========================================

def save_model(model: ToyModel, manifest_path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """保存模型，激活函数配置写入清单元数据"""
    metadata = {
        "activations": [layer.activation.to_config() for layer in model.layers],
        "residual": model.residual,
    }
    if extra:
        metadata.update(extra)
    path, _ = save_tensors(manifest_path, dict(model.parameter_arrays()), metadata)
    return path


def load_model(manifest_path: Path) -> ToyModel:
    """读取 save_model 写出的模型"""
    tensors, metadata = load_tensors(manifest_path)
    activations = metadata.get("activations", [])
    layers = []
    for i, act in enumerate(activations):
        layers.append(
            GatedFFNLayer(
                W_s=tensors[f"layers.{i}.W_s"],
                W_1=tensors[f"layers.{i}.W_1"],
                W_2=tensors[f"layers.{i}.W_2"],
                activation=ActivationKind.from_config(act),
            )
        )
    return ToyModel(layers=layers, head=tensors["head"], residual=bool(metadata.get("residual", True)))
