# -*- coding: utf-8 -*-
"""
CPU 稀疏算子
门控FFN按三步执行：
  (1) z = W_s·x                        稠密矩阵向量乘
  (2) x_1 = σ(z) ⊙ (W_1·x)             融合算子：只计算门控通过的列（输出侧稀疏）
  (3) out = W_2·x_1                    只累加 x_1 非零对应的列（输入侧稀疏）
W_1 按列主序存储 W_1ᵀ（每个中间神经元的 d_model 个权重连续），W_2 存为 W_2ᵀ 行主序。
步骤(2)读取步骤(1)已算出的 z 决定跳过哪些列，结果与稠密路径完全一致（不依赖预测器）。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numba import njit, prange

from ..core.activations import ActivationKind, ActivationTag
from ..core.errors import ConfigurationError, RejectedInputError, check_dims
from ..core.gated_ffn import GatedFFNLayer
from ..core.numerics import KERNEL_DTYPE, matvec

logger = logging.getLogger(__name__)


@dataclass
class ColumnMajorWeights:
    """
    按中间神经元分列连续存储的权重
    data[j, :] 为第 j 个中间神经元对应的 d_model 个权重
    source 记录原矩阵方向："W_1"（d_ff × d_model）或 "W_2"（d_model × d_ff）
    """
    data: np.ndarray
    source: str = "W_1"

    @classmethod
    def from_w1(cls, W_1: np.ndarray, dtype=KERNEL_DTYPE) -> "ColumnMajorWeights":
        return cls(data=np.ascontiguousarray(W_1, dtype=dtype), source="W_1")

    @classmethod
    def from_w2(cls, W_2: np.ndarray, dtype=KERNEL_DTYPE) -> "ColumnMajorWeights":
        return cls(data=np.ascontiguousarray(np.asarray(W_2).T, dtype=dtype), source="W_2")

    @property
    def d_ff(self) -> int:
        return self.data.shape[0]

    @property
    def d_model(self) -> int:
        return self.data.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.data[j]

    def to_matrix(self) -> np.ndarray:
        """还原为原方向的行主序矩阵（逐位一致）"""
        if self.source == "W_2":
            return np.ascontiguousarray(self.data.T)
        return self.data.copy()


@dataclass
class SparseActivationVector:
    """压缩形式的 x_1：升序唯一的激活下标及对应值"""
    d_ff: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        check_dims(len(self.indices), len(self.values), "SparseActivationVector: indices vs values")
        if len(self.indices):
            if self.indices[0] < 0 or self.indices[-1] >= self.d_ff:
                raise RejectedInputError(f"激活下标越界: 要求位于 [0, {self.d_ff})")
            if np.any(np.diff(self.indices) <= 0):
                raise RejectedInputError("激活下标必须严格升序且唯一")

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseActivationVector":
        indices = np.flatnonzero(dense).astype(np.int64)
        return cls(d_ff=dense.shape[0], indices=indices, values=np.ascontiguousarray(dense[indices]))

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.nnz / self.d_ff

    def to_dense(self, dtype=None) -> np.ndarray:
        dense = np.zeros(self.d_ff, dtype=dtype or self.values.dtype)
        dense[self.indices] = self.values
        return dense


@dataclass
class SparseFFNLayer:
    """稀疏算子使用的一层权重（32位，W_1/W_2 已转为列连续布局）"""
    W_s: np.ndarray
    W_1: ColumnMajorWeights
    W_2: ColumnMajorWeights
    activation: ActivationKind

    @classmethod
    def from_layer(cls, layer: GatedFFNLayer, dtype=KERNEL_DTYPE) -> "SparseFFNLayer":
        gate_threshold(layer.activation)
        return cls(
            W_s=np.ascontiguousarray(layer.W_s, dtype=dtype),
            W_1=ColumnMajorWeights.from_w1(layer.W_1, dtype),
            W_2=ColumnMajorWeights.from_w2(layer.W_2, dtype),
            activation=layer.activation,
        )

    @property
    def d_ff(self) -> int:
        return self.W_1.d_ff

    @property
    def d_model(self) -> int:
        return self.W_1.d_model


def gate_threshold(kind: ActivationKind) -> Tuple[float, bool]:
    """
    返回 (阈值, 是否包含等号)
    ReLU 通过条件 z > 0；FATReLU(T) 通过条件 z ≥ T；其余激活不支持
    """
    if kind.tag is ActivationTag.RELU:
        return 0.0, False
    if kind.tag is ActivationTag.FATRELU:
        return kind.threshold, True
    raise ConfigurationError(
        f"❌ 稀疏算子不支持该激活函数 (unsupported activation for sparse kernels): {kind}\n"
        "✅ 仅支持 ReLU 与 FATReLU(T)",
        [f"unsupported activation for sparse kernels: {kind}"],
    )


def new_counter() -> np.ndarray:
    """乘加计数器（调试模式）"""
    return np.zeros(1, dtype=np.int64)


# ========================================
# numba 内核
# ========================================

@njit(cache=True, nogil=True)
def _fused_output_sparse_kernel(z, cols, x, threshold, inclusive, idx_out, val_out, counter):
    d_ff, d_model = cols.shape
    count = 0
    for j in range(d_ff):
        zj = z[j]
        if inclusive:
            admit = zj >= threshold
        else:
            admit = zj > threshold
        if admit:
            acc = val_out[count]
            for k in range(d_model):
                acc += cols[j, k] * x[k]
            idx_out[count] = j
            val_out[count] = zj * acc
            count += 1
    counter[0] += count * d_model
    return count


@njit(cache=True, nogil=True)
def _gather_active(z, threshold, inclusive, idx_out):
    count = 0
    for j in range(z.shape[0]):
        zj = z[j]
        if inclusive:
            admit = zj >= threshold
        else:
            admit = zj > threshold
        if admit:
            idx_out[count] = j
            count += 1
    return count


@njit(parallel=True, cache=True, nogil=True)
def _fused_output_sparse_parallel_kernel(active, z, cols, x, val_out):
    d_model = cols.shape[1]
    for p in prange(active.shape[0]):
        j = active[p]
        acc = val_out[p]
        for k in range(d_model):
            acc += cols[j, k] * x[k]
        val_out[p] = z[j] * acc


@njit(cache=True, nogil=True)
def _input_sparse_kernel(indices, values, cols, out, counter):
    d_model = cols.shape[1]
    for p in range(indices.shape[0]):
        j = indices[p]
        v = values[p]
        for k in range(d_model):
            out[k] += v * cols[j, k]
    counter[0] += indices.shape[0] * d_model


@njit(cache=True, nogil=True)
def _input_dense_with_zeros_kernel(x1, cols, out, counter):
    d_ff, d_model = cols.shape
    for j in range(d_ff):
        v = x1[j]
        if v == 0:
            continue
        for k in range(d_model):
            out[k] += v * cols[j, k]
        counter[0] += d_model


@njit(parallel=True, cache=True, nogil=True)
def _input_sparse_parallel_kernel(indices, values, cols, out, partial):
    n = indices.shape[0]
    d_model = cols.shape[1]
    n_chunks = partial.shape[0]
    for c in prange(n_chunks):
        start = c * n // n_chunks
        end = (c + 1) * n // n_chunks
        for p in range(start, end):
            j = indices[p]
            v = values[p]
            for k in range(d_model):
                partial[c, k] += v * cols[j, k]
    for c in range(n_chunks):
        for k in range(d_model):
            out[k] += partial[c, k]


@njit(cache=True, nogil=True)
def _dense_gate_product_kernel(z, W, x, threshold, inclusive, out):
    rows, cols = W.shape
    for j in range(rows):
        acc = out[j]
        for k in range(cols):
            acc += W[j, k] * x[k]
        zj = z[j]
        if inclusive:
            admit = zj >= threshold
        else:
            admit = zj > threshold
        s = zj if admit else zj - zj
        out[j] = s * acc


# ========================================
# 三步算子
# ========================================

def step1_dense_gate(W_s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """步骤(1)：z = W_s·x，与 numerics.matvec 完全相同"""
    return matvec(W_s, x)


def step2_fused_output_sparse(
    z: np.ndarray,
    W1: ColumnMajorWeights,
    x: np.ndarray,
    activation: ActivationKind,
    threads: int = 1,
    counter: Optional[np.ndarray] = None,
) -> SparseActivationVector:
    """
    步骤(2)：融合 σ、稀疏矩阵向量乘与逐元素乘
    仅对通过门控的 j 计算 dot(x, W_1[j,:]) 并存储 z[j]·dot；未通过的列从不读取
    """
    check_dims(W1.d_ff, z.shape[0], "step2: z.len vs d_ff")
    check_dims(W1.d_model, x.shape[0], "step2: x.len vs d_model")
    threshold, inclusive = gate_threshold(activation)
    dtype = W1.data.dtype
    z = np.ascontiguousarray(z, dtype=dtype)
    x = np.ascontiguousarray(x, dtype=dtype)
    thr = dtype.type(threshold)
    idx = np.empty(W1.d_ff, dtype=np.int64)

    if threads > 1:
        count = _gather_active(z, thr, inclusive, idx)
        active = idx[:count]
        values = np.zeros(count, dtype=dtype)
        _fused_output_sparse_parallel_kernel(active, z, W1.data, x, values)
        if counter is not None:
            counter[0] += count * W1.d_model
        return SparseActivationVector(W1.d_ff, active, values)

    values = np.zeros(W1.d_ff, dtype=dtype)
    count = _fused_output_sparse_kernel(
        z, W1.data, x, thr, inclusive, idx, values, counter if counter is not None else new_counter()
    )
    return SparseActivationVector(W1.d_ff, idx[:count], values[:count])


def step3_input_sparse_matvec(
    x1: Union[SparseActivationVector, np.ndarray],
    W2: ColumnMajorWeights,
    threads: int = 1,
    counter: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    步骤(3)：out = Σ_{j 激活} x1[j]·W_2[:, j]，未激活列从不访问
    x1 可为压缩形式，也可为带零的稠密向量（用于对比两种表示）
    """
    counter = counter if counter is not None else new_counter()
    dtype = W2.data.dtype
    out = np.zeros(W2.d_model, dtype=dtype)
    if isinstance(x1, np.ndarray):
        check_dims(W2.d_ff, x1.shape[0], "step3: x1.len vs d_ff")
        _input_dense_with_zeros_kernel(np.ascontiguousarray(x1, dtype=dtype), W2.data, out, counter)
        return out

    check_dims(W2.d_ff, x1.d_ff, "step3: x1.d_ff vs W_2.cols")
    values = np.ascontiguousarray(x1.values, dtype=dtype)
    indices = np.ascontiguousarray(x1.indices, dtype=np.int64)
    if threads > 1 and x1.nnz > 1:
        partial = np.zeros((min(threads, x1.nnz), W2.d_model), dtype=dtype)
        _input_sparse_parallel_kernel(indices, values, W2.data, out, partial)
        counter[0] += x1.nnz * W2.d_model
    else:
        _input_sparse_kernel(indices, values, W2.data, out, counter)
    return out


def ffn_forward_sparse(
    layer: Union[GatedFFNLayer, SparseFFNLayer],
    x: np.ndarray,
    threads: int = 1,
    counter: Optional[np.ndarray] = None,
) -> np.ndarray:
    """三步组合的稀疏FFN前向（不含残差），仅支持 ReLU / FATReLU"""
    if isinstance(layer, GatedFFNLayer):
        layer = SparseFFNLayer.from_layer(layer)
    else:
        gate_threshold(layer.activation)
    check_dims(layer.d_model, x.shape[0], "ffn_forward_sparse: x.len vs d_model")
    x = np.ascontiguousarray(x, dtype=layer.W_s.dtype)
    z = step1_dense_gate(layer.W_s, x)
    x1 = step2_fused_output_sparse(z, layer.W_1, x, layer.activation, threads, counter)
    return step3_input_sparse_matvec(x1, layer.W_2, threads, counter)


# ========================================
# 稠密基准
# ========================================

def dense_step2(z: np.ndarray, W_1: np.ndarray, x: np.ndarray, activation: ActivationKind) -> np.ndarray:
    """稠密的 σ(z) ⊙ (W_1·x)：计算全部 d_ff 个点积"""
    threshold, inclusive = gate_threshold(activation)
    out = np.zeros(W_1.shape[0], dtype=W_1.dtype)
    _dense_gate_product_kernel(
        np.ascontiguousarray(z, dtype=W_1.dtype), W_1, np.ascontiguousarray(x, dtype=W_1.dtype),
        W_1.dtype.type(threshold), inclusive, out,
    )
    return out


def dense_step3(W_2: np.ndarray, x1: np.ndarray) -> np.ndarray:
    return matvec(W_2, x1)


def relative_deviation(actual: np.ndarray, expected: np.ndarray) -> float:
    """‖actual − expected‖∞ / max(‖expected‖∞, tiny)"""
    scale = float(np.max(np.abs(expected))) if expected.size else 0.0
    diff = float(np.max(np.abs(actual.astype(np.float64) - expected.astype(np.float64)))) if expected.size else 0.0
    return diff / max(scale, np.finfo(np.float64).tiny)
