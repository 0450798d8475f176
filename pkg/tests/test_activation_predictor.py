# -*- coding: utf-8 -*-
import logging
from dataclasses import replace

import numpy as np
import pytest
from conftest import zero_model

from qing_sparse.core.activations import ActivationKind
from qing_sparse.core.errors import RejectedInputError
from qing_sparse.core.gated_ffn import ModelConfig, init_model
from qing_sparse.core.numerics import SeededRng
from qing_sparse.predictor.activation_predictor import (
    ActivationPredictor,
    OraclePredictor,
    PredictorConfig,
    PredictorDataset,
    collect_pairs,
    evaluate_predictor,
    init_predictor,
    load_predictor,
    save_predictor,
    train_layer_predictors,
    train_predictor,
    write_predictor_csv,
)
from qing_sparse.utils.export_tools import read_csv


class FixedMaskPredictor:
    def __init__(self, masks):
        self.masks = np.asarray(masks, dtype=bool)

    def predict_mask(self, inputs):
        return self.masks[: len(inputs)]


def constant_predictor(d_model, d_ff, bias, tau=0.5):
    return ActivationPredictor(
        W_a=np.zeros((2, d_model)), b_a=np.zeros(2),
        W_b=np.zeros((d_ff, 2)), b_b=np.full(d_ff, bias),
        tau=tau,
    )


def dataset_of(masks, d_model=3):
    masks = np.asarray(masks, dtype=bool)
    inputs = SeededRng(0).normal(size=(len(masks), d_model))
    ds = PredictorDataset.from_pairs(inputs, masks, 0, SeededRng(1))
    return replace(ds, eval_index=np.arange(len(masks)))


@pytest.fixture
def relu_model():
    cfg = ModelConfig(d_model=6, d_ff=16, num_layers=2, output_dim=2, activation=ActivationKind.relu())
    return init_model(cfg, SeededRng(2))


@pytest.fixture
def corpus():
    return list(SeededRng(3).normal(size=(120, 6)))


def test_hand_built_pair():
    ds = dataset_of([[True, True, False, False]])
    metrics = evaluate_predictor(FixedMaskPredictor([[False, True, True, False]]), ds)
    assert metrics.recall == 0.5
    assert metrics.predicted_sparsity == 0.5
    assert metrics.eval_pairs == 1 and metrics.recall_pairs == 1


def test_matches_brute_force():
    rng = SeededRng(4)
    truth = rng.uniform(0.0, 1.0, size=(30, 8)) < 0.4
    pred = rng.uniform(0.0, 1.0, size=(30, 8)) < 0.5
    truth[3] = False
    metrics = evaluate_predictor(FixedMaskPredictor(pred), dataset_of(truth))

    recalls, sparsities = [], []
    for p, t in zip(pred, truth):
        a_pred = {j for j in range(8) if p[j]}
        a_true = {j for j in range(8) if t[j]}
        sparsities.append(1 - len(a_pred) / 8)
        if a_true:
            recalls.append(len(a_pred & a_true) / len(a_true))
    assert metrics.recall == pytest.approx(np.mean(recalls), abs=1e-15)
    assert metrics.predicted_sparsity == pytest.approx(np.mean(sparsities), abs=1e-15)
    assert metrics.recall_pairs == int(truth.any(axis=1).sum())


def test_oracle_predictor(relu_model, corpus):
    for layer in range(relu_model.num_layers):
        ds = collect_pairs(relu_model, corpus, layer, 100, SeededRng(5), eval_fraction=0.2)
        metrics = evaluate_predictor(OraclePredictor(relu_model, layer), ds)
        _, masks = ds.split("eval")
        assert metrics.recall == 1.0
        assert abs(metrics.predicted_sparsity - (1 - masks.mean(axis=1)).mean()) <= 1e-12


def test_constant_predictors(relu_model, corpus):
    ds = collect_pairs(relu_model, corpus, 0, 100, SeededRng(5), eval_fraction=0.2)
    inactive = evaluate_predictor(constant_predictor(6, 16, -50.0), ds)
    assert inactive.predicted_sparsity == 1.0
    assert inactive.recall == 0.0
    active = evaluate_predictor(constant_predictor(6, 16, 50.0), ds)
    assert active.recall == 1.0
    assert active.predicted_sparsity == 0.0


def test_raising_tau_predicts_fewer_active(relu_model, corpus):
    ds = collect_pairs(relu_model, corpus, 1, 100, SeededRng(5), eval_fraction=0.3)
    predictor = init_predictor(6, 16, 4, SeededRng(6))
    predictor.b_b[:] = SeededRng(7).normal(size=16)
    results = [evaluate_predictor(replace(predictor, tau=tau), ds) for tau in (0.2, 0.4, 0.5, 0.6, 0.8)]
    assert all(b.predicted_sparsity >= a.predicted_sparsity for a, b in zip(results, results[1:]))
    assert all(b.recall <= a.recall for a, b in zip(results, results[1:]))


def test_separable_layer_is_learned():
    inputs = SeededRng(8).normal(size=(400, 4))
    masks = np.repeat((inputs[:, 0] > 0)[:, None], 6, axis=1)
    ds = PredictorDataset.from_pairs(inputs, masks, 0, SeededRng(9), eval_fraction=0.1)
    predictor = train_predictor(ds, hidden_dim=4, epochs=20, lr=0.5, rng=SeededRng(10), batch_size=16)
    assert evaluate_predictor(predictor, ds).recall > 0.99


def test_zero_epochs_returns_initialization(relu_model, corpus):
    ds = collect_pairs(relu_model, corpus, 0, 60, SeededRng(5))
    trained = train_predictor(ds, hidden_dim=3, epochs=0, rng=SeededRng(11))
    initial = init_predictor(6, 16, 3, SeededRng(11))
    for a, b in zip(trained.parameters(), initial.parameters()):
        assert a.tobytes() == b.tobytes()


def test_default_hidden_dim_is_quarter_width(relu_model, corpus):
    ds = collect_pairs(relu_model, corpus, 0, 60, SeededRng(5))
    assert train_predictor(ds, epochs=0).hidden_dim == 4


def test_split_is_deterministic_and_disjoint(relu_model, corpus):
    a = collect_pairs(relu_model, corpus, 0, 100, SeededRng(12))
    b = collect_pairs(relu_model, corpus, 0, 100, SeededRng(12))
    assert a.eval_index.tolist() == b.eval_index.tolist()
    assert len(a.eval_index) == 5 and len(a.train_index) == 95
    assert not set(a.eval_index) & set(a.train_index)

    small = PredictorDataset.from_pairs(np.zeros((10, 2)), np.zeros((10, 3)), 0, SeededRng(0))
    assert len(small.eval_index) == 1
    with pytest.raises(RejectedInputError):
        small.split("test")


def test_short_corpus_warns_and_returns_partial(caplog, relu_model, corpus):
    caplog.set_level(logging.WARNING)
    ds = collect_pairs(relu_model, corpus[:20], 0, 50, SeededRng(5))
    assert len(ds) == 20
    assert "partial dataset" in caplog.text


def test_layer_index_validated(relu_model, corpus):
    with pytest.raises(RejectedInputError):
        collect_pairs(relu_model, corpus, 2, 10, SeededRng(5))


def test_dead_layer_has_all_inactive_masks(rng):
    model = zero_model(4, 8, 2, ActivationKind.relu())
    ds = collect_pairs(model, list(rng.normal(size=(20, 4))), 1, 20, SeededRng(5), eval_fraction=0.25)
    assert not ds.masks.any()
    metrics = evaluate_predictor(OraclePredictor(model, 1), ds)
    assert metrics.recall == 1.0 and metrics.recall_pairs == 0
    assert metrics.predicted_sparsity == 1.0


def test_layer_fleet_and_csv(tmp_path, relu_model, corpus):
    cfg = PredictorConfig(pairs=60, epochs=2, batch_size=8, eval_fraction=0.2)
    serial = train_layer_predictors(relu_model, corpus, cfg, seed=3)
    parallel = train_layer_predictors(relu_model, corpus, cfg, seed=3, max_workers=2)
    assert [m.layer_index for m in serial.metrics] == [0, 1]
    assert [m.recall for m in serial.metrics] == [m.recall for m in parallel.metrics]
    assert serial.mean_recall == pytest.approx(np.mean([m.recall for m in serial.metrics]))

    rows = read_csv(write_predictor_csv(serial.metrics, tmp_path / "predictor_metrics.csv"))
    assert list(rows[0]) == ["layer", "recall", "predicted_sparsity"]
    assert [r["layer"] for r in rows] == ["0", "1"]


def test_save_and_load(tmp_path):
    predictor = init_predictor(5, 7, 3, SeededRng(13), layer_index=2, tau=0.6)
    restored = load_predictor(save_predictor(predictor, tmp_path / "predictor.json"))
    assert restored.layer_index == 2 and restored.tau == 0.6
    for a, b in zip(predictor.parameters(), restored.parameters()):
        assert a.tobytes() == b.tobytes()


def test_predictor_config():
    assert PredictorConfig().diagnostics() == []
    cfg = PredictorConfig(pairs=100, hidden_dim=8, layers=[0])
    assert PredictorConfig.from_config(cfg.to_config()) == cfg
    problems = PredictorConfig(pairs=1, tau=1.0, eval_fraction=0.0).diagnostics()
    assert len(problems) == 3
