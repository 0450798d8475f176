# -*- coding: utf-8 -*-
"""
激活预测器
- 每层一个两层网络：Linear → ReLU → Linear，sigmoid 输出每个中间神经元被激活的概率
- 训练数据为 (层输入 x, x_1 非零掩码) 对，按种子 95%/5% 划分训练/评估集
- BCE 损失 + SGD 动量训练，保留评估集召回率最高的快照
- 评估指标：激活召回率与预测稀疏度（逐对求平均，再跨层求平均）
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..core.errors import NumericError, RejectedInputError
from ..core.gated_ffn import ToyModel, forward_layer, forward_model
from ..core.numerics import TRAIN_DTYPE, SeededRng, load_tensors, save_tensors
from ..training.optimizers import OptimizerConfig, SGDMomentum
from ..utils.export_tools import write_csv

logger = logging.getLogger(__name__)

_PREDICTOR_STREAM = 11


@dataclass
class PredictorConfig:
    """预测器配置（对应配置文件 predictor 段）"""
    enabled: bool = True
    pairs: int = 50000
    hidden_dim: Optional[int] = None
    epochs: int = 5
    lr: float = 0.05
    batch_size: int = 64
    tau: float = 0.5
    momentum: float = 0.9
    eval_fraction: float = 0.05
    layers: Optional[List[int]] = None

    def diagnostics(self) -> List[str]:
        problems = []
        if self.pairs < 2:
            problems.append(f"predictor.pairs: 至少需要2对（训练/评估各一），实际 {self.pairs}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            problems.append(f"predictor.hidden_dim: 必须 ≥ 1，实际 {self.hidden_dim}")
        if self.epochs < 0:
            problems.append(f"predictor.epochs: 必须非负，实际 {self.epochs}")
        if self.lr <= 0:
            problems.append(f"predictor.lr: 必须为正数，实际 {self.lr}")
        if self.batch_size < 1:
            problems.append(f"predictor.batch_size: 必须 ≥ 1，实际 {self.batch_size}")
        if not 0.0 < self.tau < 1.0:
            problems.append(f"predictor.tau: 要求 0 < tau < 1，实际 {self.tau}")
        if not 0.0 < self.eval_fraction < 1.0:
            problems.append(f"predictor.eval_fraction: 要求 0 < eval_fraction < 1，实际 {self.eval_fraction}")
        return problems

    def to_config(self) -> Dict[str, Any]:
        return {
            "enabled": self.enabled,
            "pairs": self.pairs,
            "hidden_dim": self.hidden_dim,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "tau": self.tau,
            "momentum": self.momentum,
            "eval_fraction": self.eval_fraction,
            "layers": self.layers,
        }

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "PredictorConfig":
        hidden = config.get("hidden_dim")
        layers = config.get("layers")
        return cls(
            enabled=bool(config.get("enabled", True)),
            pairs=int(config.get("pairs", 50000)),
            hidden_dim=None if hidden is None else int(hidden),
            epochs=int(config.get("epochs", 5)),
            lr=float(config.get("lr", 0.05)),
            batch_size=int(config.get("batch_size", 64)),
            tau=float(config.get("tau", 0.5)),
            momentum=float(config.get("momentum", 0.9)),
            eval_fraction=float(config.get("eval_fraction", 0.05)),
            layers=None if layers is None else [int(i) for i in layers],
        )


@dataclass
class ActivationPredictor:
    """两层预测网络：W_a (hidden × d_model), W_b (d_ff × hidden)"""
    W_a: np.ndarray
    b_a: np.ndarray
    W_b: np.ndarray
    b_b: np.ndarray
    layer_index: int = 0
    tau: float = 0.5

    def __post_init__(self):
        if self.W_b.shape[1] != self.W_a.shape[0]:
            raise RejectedInputError(f"预测器隐藏维度不一致: {self.W_a.shape} vs {self.W_b.shape}")
        if self.b_a.shape != (self.W_a.shape[0],) or self.b_b.shape != (self.W_b.shape[0],):
            raise RejectedInputError("预测器偏置形状与权重不一致")

    @property
    def hidden_dim(self) -> int:
        return self.W_a.shape[0]

    @property
    def d_model(self) -> int:
        return self.W_a.shape[1]

    @property
    def d_ff(self) -> int:
        return self.W_b.shape[0]

    def parameters(self) -> List[np.ndarray]:
        return [self.W_a, self.b_a, self.W_b, self.b_b]

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        hidden = np.maximum(inputs @ self.W_a.T + self.b_a, 0.0)
        return hidden @ self.W_b.T + self.b_b

    def probabilities(self, inputs: np.ndarray) -> np.ndarray:
        return expit(self.logits(inputs))

    def predict_mask(self, inputs: np.ndarray) -> np.ndarray:
        """预测激活集合：sigmoid(out_j) ≥ τ"""
        return self.probabilities(np.atleast_2d(inputs)) >= self.tau

    def copy(self) -> "ActivationPredictor":
        return ActivationPredictor(
            W_a=self.W_a.copy(), b_a=self.b_a.copy(), W_b=self.W_b.copy(), b_b=self.b_b.copy(),
            layer_index=self.layer_index, tau=self.tau,
        )


class OraclePredictor:
    """直接给出真实激活掩码的预测器（评估上限）"""

    def __init__(self, model: ToyModel, layer_index: int):
        self.model = model
        self.layer_index = layer_index

    @property
    def d_ff(self) -> int:
        return self.model.d_ff

    def predict_mask(self, inputs: np.ndarray) -> np.ndarray:
        layer = self.model.layers[self.layer_index]
        return np.stack([forward_layer(layer, x)[1].x1 != 0 for x in np.atleast_2d(inputs)])


@dataclass
class PredictorDataset:
    """(层输入, 激活掩码) 对及训练/评估划分"""
    inputs: np.ndarray
    masks: np.ndarray
    layer_index: int
    train_index: np.ndarray
    eval_index: np.ndarray

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def d_ff(self) -> int:
        return self.masks.shape[1]

    def split(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        if name == "train":
            index = self.train_index
        elif name == "eval":
            index = self.eval_index
        else:
            raise RejectedInputError(f"未知的数据划分: '{name}'（可选 train / eval）")
        return self.inputs[index], self.masks[index]

    @classmethod
    def from_pairs(cls, inputs: np.ndarray, masks: np.ndarray, layer_index: int,
                   rng: SeededRng, eval_fraction: float = 0.05) -> "PredictorDataset":
        """按种子打乱后划分：评估集占 eval_fraction（至少一对）"""
        n = len(inputs)
        order = rng.permutation(n)
        n_eval = min(n, max(1, int(round(n * eval_fraction)))) if n else 0
        return cls(
            inputs=np.asarray(inputs, dtype=TRAIN_DTYPE),
            masks=np.asarray(masks, dtype=bool),
            layer_index=layer_index,
            train_index=np.sort(order[n_eval:]),
            eval_index=np.sort(order[:n_eval]),
        )


@dataclass
class PredictorMetrics:
    """预测器指标，仅在评估集上计算"""
    recall: float
    predicted_sparsity: float
    eval_pairs: int
    recall_pairs: int
    layer_index: int = 0


def collect_pairs(
    model: ToyModel,
    corpus: Sequence[np.ndarray],
    layer_index: int,
    count: int,
    rng: SeededRng,
    eval_fraction: float = 0.05,
    max_workers: int = 1,
) -> PredictorDataset:
    """
    收集训练对：对语料逐条前向，取进入第 layer_index 层的隐状态 x 与 x_1 的非零掩码
    语料不足 count 条时给出警告并返回部分数据集
    """
    if not 0 <= layer_index < model.num_layers:
        raise RejectedInputError(f"层号越界: {layer_index}，模型共 {model.num_layers} 层")
    if len(corpus) < count:
        logger.warning("⚠ 语料在收集到 %d 对之前耗尽，仅得到 %d 对 (partial dataset)", count, len(corpus))
    inputs = list(corpus[:count])

    def pair(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        _, trace = forward_model(model, x)
        layer = trace.layers[layer_index]
        return layer.x, layer.x1 != 0

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            pairs = list(pool.map(pair, inputs))
    else:
        pairs = [pair(x) for x in inputs]

    if pairs:
        xs = np.stack([p[0] for p in pairs])
        masks = np.stack([p[1] for p in pairs])
    else:
        xs = np.zeros((0, model.d_model), dtype=TRAIN_DTYPE)
        masks = np.zeros((0, model.d_ff), dtype=bool)
    return PredictorDataset.from_pairs(xs, masks, layer_index, rng, eval_fraction)


def init_predictor(d_model: int, d_ff: int, hidden_dim: int, rng: SeededRng,
                   layer_index: int = 0, tau: float = 0.5) -> ActivationPredictor:
    bound_a = 1.0 / math.sqrt(d_model)
    bound_b = 1.0 / math.sqrt(hidden_dim)
    return ActivationPredictor(
        W_a=rng.uniform(-bound_a, bound_a, size=(hidden_dim, d_model)),
        b_a=np.zeros(hidden_dim, dtype=TRAIN_DTYPE),
        W_b=rng.uniform(-bound_b, bound_b, size=(d_ff, hidden_dim)),
        b_b=np.zeros(d_ff, dtype=TRAIN_DTYPE),
        layer_index=layer_index,
        tau=tau,
    )


def _bce_step(p: ActivationPredictor, X: np.ndarray, Y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """二元交叉熵的损失与梯度（对所有元素求平均）"""
    pre = X @ p.W_a.T + p.b_a
    hidden = np.maximum(pre, 0.0)
    out = hidden @ p.W_b.T + p.b_b
    loss = float(np.mean(np.logaddexp(0.0, out) - Y * out))
    d_out = (expit(out) - Y) / out.size
    d_hidden = (d_out @ p.W_b) * (pre > 0)
    grads = [d_hidden.T @ X, d_hidden.sum(axis=0), d_out.T @ hidden, d_out.sum(axis=0)]
    return loss, grads


def train_predictor(
    ds: PredictorDataset,
    hidden_dim: Optional[int] = None,
    epochs: int = 5,
    lr: float = 0.05,
    rng: Optional[SeededRng] = None,
    batch_size: int = 64,
    tau: float = 0.5,
    momentum: float = 0.9,
) -> ActivationPredictor:
    """
    训练激活预测器

    每个epoch结束后在评估集上计算召回率，返回召回率最高的快照；epochs=0 时返回随机初始化
    """
    train_x, train_m = ds.split("train")
    if len(train_x) == 0:
        raise RejectedInputError("预测器训练集为空 (empty train split)")
    rng = rng or SeededRng(0, _PREDICTOR_STREAM)
    hidden_dim = hidden_dim or max(1, ds.d_ff // 4)
    predictor = init_predictor(train_x.shape[1], ds.d_ff, hidden_dim, rng, ds.layer_index, tau)
    optimizer = SGDMomentum(OptimizerConfig(momentum=momentum))
    targets = train_m.astype(TRAIN_DTYPE)

    best, best_recall = predictor.copy(), -1.0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            loss, grads = _bce_step(predictor, train_x[batch], targets[batch])
            if not math.isfinite(loss):
                raise NumericError(
                    f"❌ 预测器训练发散 (non-finite loss)：layer={ds.layer_index}, epoch={epoch}, batch={start // batch_size}"
                )
            optimizer.step(predictor.parameters(), grads, lr)
            losses.append(loss)
        metrics = evaluate_predictor(predictor, ds)
        logger.debug(
            "预测器 layer=%d epoch=%d: bce=%.5f, recall=%.4f, predicted_sparsity=%.4f",
            ds.layer_index, epoch, float(np.mean(losses)), metrics.recall, metrics.predicted_sparsity,
        )
        if metrics.recall > best_recall:
            best, best_recall = predictor.copy(), metrics.recall
    return best


def evaluate_predictor(p, ds: PredictorDataset, split: str = "eval") -> PredictorMetrics:
    """
    逐对计算：
    召回 = |A_pred ∩ A_true| / |A_true|（A_true 为空的对不计入召回均值）
    预测稀疏度 = 1 − |A_pred| / d_ff
    指标为各对的平均值；没有可计入召回的对时召回率记为1.0
    """
    inputs, masks = ds.split(split)
    if len(inputs) == 0:
        raise RejectedInputError("评估集为空 (empty eval split)")
    predicted = np.asarray(p.predict_mask(inputs), dtype=bool)
    d_ff = masks.shape[1]

    recalls, sparsities = [], []
    for pred, truth in zip(predicted, masks):
        n_true = int(np.count_nonzero(truth))
        n_pred = int(np.count_nonzero(pred))
        sparsities.append(1.0 - n_pred / d_ff)
        if n_true:
            recalls.append(int(np.count_nonzero(pred & truth)) / n_true)

    return PredictorMetrics(
        recall=math.fsum(recalls) / len(recalls) if recalls else 1.0,
        predicted_sparsity=math.fsum(sparsities) / len(sparsities),
        eval_pairs=len(inputs),
        recall_pairs=len(recalls),
        layer_index=ds.layer_index,
    )


# ========================================
# 逐层预测器
# ========================================

@dataclass
class LayerPredictorFleet:
    """每层一个预测器，指标先逐对平均再跨层平均"""
    predictors: List[ActivationPredictor]
    metrics: List[PredictorMetrics]
    datasets: List[PredictorDataset] = field(default_factory=list, repr=False)

    @property
    def mean_recall(self) -> float:
        return math.fsum(m.recall for m in self.metrics) / len(self.metrics)

    @property
    def mean_predicted_sparsity(self) -> float:
        return math.fsum(m.predicted_sparsity for m in self.metrics) / len(self.metrics)


def train_layer_predictors(
    model: ToyModel,
    corpus: Sequence[np.ndarray],
    cfg: PredictorConfig,
    seed: int = 0,
    max_workers: int = 1,
) -> LayerPredictorFleet:
    """各层预测器相互独立，可并行训练"""
    layers = cfg.layers if cfg.layers is not None else list(range(model.num_layers))
    root = SeededRng(seed, _PREDICTOR_STREAM)

    def train_one(layer: int):
        rng = root.child(layer)
        ds = collect_pairs(model, corpus, layer, cfg.pairs, rng, cfg.eval_fraction)
        predictor = train_predictor(
            ds, cfg.hidden_dim, cfg.epochs, cfg.lr, rng, cfg.batch_size, cfg.tau, cfg.momentum
        )
        metrics = evaluate_predictor(predictor, ds)
        logger.info(
            "✓ 第 %d 层预测器: recall=%.4f, predicted_sparsity=%.4f",
            layer, metrics.recall, metrics.predicted_sparsity,
        )
        return predictor, metrics, ds

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            trained = list(pool.map(train_one, layers))
    else:
        trained = [train_one(layer) for layer in layers]
    return LayerPredictorFleet(
        predictors=[t[0] for t in trained],
        metrics=[t[1] for t in trained],
        datasets=[t[2] for t in trained],
    )


PREDICTOR_CSV_HEADER = ["layer", "recall", "predicted_sparsity"]


def write_predictor_csv(metrics: Sequence[PredictorMetrics], path: Path) -> Path:
    rows = [(m.layer_index, m.recall, m.predicted_sparsity) for m in metrics]
    return write_csv(path, PREDICTOR_CSV_HEADER, rows)


def save_predictor(p: ActivationPredictor, manifest_path: Path) -> Path:
    tensors = {"W_a": p.W_a, "b_a": p.b_a, "W_b": p.W_b, "b_b": p.b_b}
    path, _ = save_tensors(manifest_path, tensors, {"layer_index": p.layer_index, "tau": p.tau})
    return path


def load_predictor(manifest_path: Path) -> ActivationPredictor:
    tensors, metadata = load_tensors(manifest_path)
    return ActivationPredictor(
        W_a=tensors["W_a"], b_a=tensors["b_a"], W_b=tensors["W_b"], b_b=tensors["b_b"],
        layer_index=int(metadata.get("layer_index", 0)), tau=float(metadata.get("tau", 0.5)),
    )
