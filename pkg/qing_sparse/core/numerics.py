# -*- coding: utf-8 -*-
"""
数值基础模块
- 稠密矩阵/向量约定（行主序，训练路径float64，内核路径float32）
- 可复现的计数器型随机数发生器
- 纯循环的稠密矩阵向量乘（作为稀疏内核的统一基准）
- 有限差分梯度检查
- 张量清单（JSON）+ 小端二进制块的序列化
"""

import json
import math
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import NumericError, RejectedInputError, check_dims

# 训练路径与内核路径的精度约定
TRAIN_DTYPE = np.float64
KERNEL_DTYPE = np.float32

# 序列化dtype标签
_DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

DenseMatrix = np.ndarray
DenseVector = np.ndarray


def as_matrix(data: Any, dtype=TRAIN_DTYPE) -> DenseMatrix:
    """转换为行主序连续的二维矩阵，并校验 rows ≥ 1, cols ≥ 1"""
    mat = np.ascontiguousarray(data, dtype=dtype)
    if mat.ndim != 2:
        raise RejectedInputError(f"矩阵必须是二维的，实际维度: {mat.ndim}")
    if mat.shape[0] < 1 or mat.shape[1] < 1:
        raise RejectedInputError(f"矩阵形状无效: {mat.shape}（要求 rows ≥ 1, cols ≥ 1）")
    return mat


def as_vector(data: Any, dtype=TRAIN_DTYPE) -> DenseVector:
    """转换为连续的一维向量"""
    vec = np.ascontiguousarray(data, dtype=dtype)
    if vec.ndim != 1:
        raise RejectedInputError(f"向量必须是一维的，实际维度: {vec.ndim}")
    return vec


class SeededRng:
    """
    可复现随机数发生器
    基于numpy的Philox计数器型发生器（4x64，10轮），同一seed在任意平台产生相同序列。
    stream用于派生互不相关的子流（例如教师模型与数据采样各用一条流）。
    单一所有者使用，不在并发任务间共享。
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or seed >= 2**64:
            raise RejectedInputError(f"seed必须是64位无符号整数，实际: {seed}")
        self.seed = int(seed)
        self.stream = int(stream)
        seed_seq = np.random.SeedSequence([self.seed, self.stream])
        self._generator = np.random.Generator(np.random.Philox(seed_seq))

    def child(self, stream: int) -> "SeededRng":
        """派生子流，同(seed, stream)总是得到相同的子流"""
        return SeededRng(self.seed, self.stream * 1_000_003 + stream + 1)

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._generator.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)


@njit(cache=True, nogil=True)
def _matvec_kernel(W, x, y):
    rows, cols = W.shape
    for i in range(rows):
        acc = y[i]
        for j in range(cols):
            acc += W[i, j] * x[j]
        y[i] = acc


@njit(cache=True, nogil=True)
def _matvec_transposed_kernel(W, x, y):
    rows, cols = W.shape
    for i in range(rows):
        xi = x[i]
        if xi == 0.0:
            continue
        for j in range(cols):
            y[j] += W[i, j] * xi


def matvec(W: DenseMatrix, x: DenseVector) -> DenseVector:
    """
    稠密矩阵向量乘 y = W·x（纯循环，按行顺序累加）

    参数:
        W: (rows × cols) 行主序矩阵
        x: 长度为cols的向量

    返回:
        长度为rows的向量，dtype与W一致
    """
    if W.ndim != 2 or x.ndim != 1:
        raise RejectedInputError(f"matvec 需要二维矩阵与一维向量，实际: {W.shape}, {x.shape}")
    check_dims(W.shape[1], x.shape[0], "matvec: W.cols vs x.len")
    W = np.ascontiguousarray(W)
    x = np.ascontiguousarray(x, dtype=W.dtype)
    y = np.zeros(W.shape[0], dtype=W.dtype)
    _matvec_kernel(W, x, y)
    return y


def matvec_transposed(W: DenseMatrix, x: DenseVector) -> DenseVector:
    """转置乘 y = Wᵀ·x，反向传播使用"""
    if W.ndim != 2 or x.ndim != 1:
        raise RejectedInputError(f"matvec_transposed 需要二维矩阵与一维向量，实际: {W.shape}, {x.shape}")
    check_dims(W.shape[0], x.shape[0], "matvec_transposed: W.rows vs x.len")
    W = np.ascontiguousarray(W)
    x = np.ascontiguousarray(x, dtype=W.dtype)
    y = np.zeros(W.shape[1], dtype=W.dtype)
    _matvec_transposed_kernel(W, x, y)
    return y


def grad_check(
    f: Callable[[np.ndarray], float],
    grad_f: Callable[[np.ndarray], np.ndarray],
    p: DenseVector,
    eps: float = 1e-5,
) -> float:
    """
    中心差分梯度检查

    返回所有坐标上 |解析梯度 − 中心差分| / max(1, |中心差分|) 的最大值
    """
    if eps <= 0:
        raise RejectedInputError(f"eps 必须为正数，实际: {eps}")
    p = np.array(p, dtype=np.float64, copy=True)
    analytic = np.asarray(grad_f(p.copy()), dtype=np.float64).reshape(-1)
    check_dims(p.size, analytic.size, "grad_check: 梯度长度")

    flat = p.reshape(-1)
    max_error = 0.0
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + eps
        f_plus = float(f(p.copy()))
        flat[k] = original - eps
        f_minus = float(f(p.copy()))
        flat[k] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(f"grad_check: 坐标 {k} 处函数值非有限 (non-finite): {f_plus}, {f_minus}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        error = abs(analytic[k] - numeric) / max(1.0, abs(numeric))
        max_error = max(max_error, error)
    return max_error


# ========================================
# 张量序列化：清单JSON + 小端二进制块
# ========================================

def save_tensors(
    manifest_path: Path,
    tensors: Dict[str, np.ndarray],
    metadata: Optional[Dict[str, Any]] = None,
) -> Tuple[Path, Path]:
    """
    保存张量集合

    清单文件列出每个张量的 name / dtype("f32"/"f64") / shape / offset(字节)，
    二进制块与清单同名、后缀为 .bin，按清单顺序连续存放。

    返回:
        (清单路径, 二进制块路径)
    """
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for name, array in tensors.items():
            array = np.asarray(array)
            tag = _TAG_OF.get(array.dtype)
            if tag is None:
                raise RejectedInputError(f"不支持的张量dtype: {name} -> {array.dtype}")
            data = np.ascontiguousarray(array, dtype=_DTYPE_TAGS[tag]).tobytes(order="C")
            blob.write(data)
            entries.append({"name": name, "dtype": tag, "shape": list(array.shape), "offset": offset})
            offset += len(data)

    manifest = {
        "format": "qing-tensors",
        "version": 1,
        "blob": blob_path.name,
        "tensors": entries,
        "metadata": metadata or {},
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
    return manifest_path, blob_path


def load_tensors(manifest_path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """读取 save_tensors 写出的张量，逐位还原"""
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()

    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPE_TAGS[entry["dtype"]]
        shape: Sequence[int] = entry["shape"]
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"])
        tensors[entry["name"]] = array.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    return tensors, manifest.get("metadata", {})
