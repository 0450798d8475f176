# -*- coding: utf-8 -*-
"""
激活函数及其导数
支持 Swish / ReLU / Shifted ReLU(b) / FATReLU(T)，标量与numpy数组通用
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, RejectedInputError

ArrayLike = Union[float, np.ndarray]


class ActivationTag(Enum):
    """激活函数类型枚举"""
    SWISH = "swish"
    RELU = "relu"
    SHIFTED_RELU = "shifted_relu"
    FATRELU = "fatrelu"


@dataclass(frozen=True)
class ActivationKind:
    """
    激活函数配置
    - FATReLU 要求 threshold > 0；threshold == 0 统一表示为 ReLU
    - Shifted ReLU 要求 bias ≥ 0
    """
    tag: ActivationTag
    param: float = 0.0

    def __post_init__(self):
        if self.tag is ActivationTag.FATRELU and not self.param > 0:
            raise RejectedInputError(f"FATReLU 阈值必须为正数 (T > 0)，实际: {self.param}")
        if self.tag is ActivationTag.SHIFTED_RELU and not self.param >= 0:
            raise RejectedInputError(f"Shifted ReLU 偏置必须非负 (b ≥ 0)，实际: {self.param}")
        if self.tag in (ActivationTag.SWISH, ActivationTag.RELU) and self.param != 0.0:
            raise RejectedInputError(f"{self.tag.value} 不接受参数，实际: {self.param}")

    @classmethod
    def swish(cls) -> "ActivationKind":
        return cls(ActivationTag.SWISH)

    @classmethod
    def relu(cls) -> "ActivationKind":
        return cls(ActivationTag.RELU)

    @classmethod
    def shifted_relu(cls, bias: float) -> "ActivationKind":
        return cls(ActivationTag.SHIFTED_RELU, float(bias))

    @classmethod
    def fatrelu(cls, threshold: float) -> "ActivationKind":
        """阈值为0时退化为普通ReLU"""
        if threshold == 0:
            return cls.relu()
        return cls(ActivationTag.FATRELU, float(threshold))

    @property
    def threshold(self) -> float:
        return self.param if self.tag is ActivationTag.FATRELU else 0.0

    @property
    def bias(self) -> float:
        return self.param if self.tag is ActivationTag.SHIFTED_RELU else 0.0

    @property
    def supports_sparse_kernels(self) -> bool:
        """融合稀疏算子只支持 ReLU / FATReLU"""
        return self.tag in (ActivationTag.RELU, ActivationTag.FATRELU)

    def to_config(self) -> Dict[str, Any]:
        """序列化为配置字典，如 {"kind": "fatrelu", "threshold": 0.01}"""
        config: Dict[str, Any] = {"kind": self.tag.value}
        if self.tag is ActivationTag.FATRELU:
            config["threshold"] = self.param
        elif self.tag is ActivationTag.SHIFTED_RELU:
            config["bias"] = self.param
        return config

    @classmethod
    def from_config(cls, config: Union[str, Dict[str, Any]]) -> "ActivationKind":
        """从配置字典（或简写字符串）构造"""
        if isinstance(config, str):
            config = {"kind": config}
        kind = str(config.get("kind", "")).lower()
        if kind == ActivationTag.SWISH.value:
            return cls.swish()
        if kind == ActivationTag.RELU.value:
            return cls.relu()
        if kind == ActivationTag.SHIFTED_RELU.value:
            return cls.shifted_relu(float(config.get("bias", 0.0)))
        if kind == ActivationTag.FATRELU.value:
            return cls.fatrelu(float(config.get("threshold", 0.0)))
        raise ConfigurationError(f"❌ 不支持的激活函数: '{kind}'\n✅ 可选: swish, relu, shifted_relu, fatrelu")

    def __str__(self) -> str:
        if self.tag is ActivationTag.FATRELU:
            return f"FATReLU(T={self.param:g})"
        if self.tag is ActivationTag.SHIFTED_RELU:
            return f"ShiftedReLU(b={self.param:g})"
        return "Swish" if self.tag is ActivationTag.SWISH else "ReLU"


def _as_float_array(z: ArrayLike) -> np.ndarray:
    arr = np.asarray(z)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _restore_scalar(z: ArrayLike, out: np.ndarray) -> ArrayLike:
    return float(out) if np.ndim(z) == 0 else out


def apply(kind: ActivationKind, z: ArrayLike) -> ArrayLike:
    """
    逐元素应用激活函数
    - Swish: z·sigmoid(z)
    - ReLU: max(z, 0)
    - ShiftedReLU(b): max(z − b, 0)
    - FATReLU(T): z ≥ T 时为 z，否则为 0
    """
    arr = _as_float_array(z)
    if kind.tag is ActivationTag.SWISH:
        out = arr * expit(arr)
    elif kind.tag is ActivationTag.RELU:
        out = np.maximum(arr, 0)
    elif kind.tag is ActivationTag.SHIFTED_RELU:
        out = np.maximum(arr - arr.dtype.type(kind.param), 0)
    else:
        out = np.where(arr >= kind.param, arr, np.zeros_like(arr))
    return _restore_scalar(z, np.asarray(out, dtype=arr.dtype))


def derivative(kind: ActivationKind, z: ArrayLike) -> ArrayLike:
    """
    激活函数导数
    拐点处的次梯度取0，保证被剪枝的坐标在反向传播中保持剪枝
    """
    arr = _as_float_array(z)
    if kind.tag is ActivationTag.SWISH:
        sig = expit(arr)
        out = sig * (1.0 + arr * (1.0 - sig))
    elif kind.tag is ActivationTag.RELU:
        out = (arr > 0).astype(arr.dtype)
    elif kind.tag is ActivationTag.SHIFTED_RELU:
        out = (arr > kind.param).astype(arr.dtype)
    else:
        out = (arr >= kind.param).astype(arr.dtype)
    return _restore_scalar(z, np.asarray(out, dtype=arr.dtype))
