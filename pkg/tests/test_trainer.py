# -*- coding: utf-8 -*-
import threading
from dataclasses import replace

import numpy as np
import pytest

from qing_sparse.core.activations import ActivationKind
from qing_sparse.core.errors import ConfigurationError, DivergenceError, NumericError, RejectedInputError
from qing_sparse.core.gated_ffn import ModelConfig
from qing_sparse.training.method_framework import MethodConfig
from qing_sparse.training.regularization import RegularizationSchedule, RegularizationStage, lambda_at
from qing_sparse.training.sparsity_metrics import SweepConfig
from qing_sparse.training.synthetic_data import make_task
from qing_sparse.training.trainer import (
    TrainConfig,
    TrainingSession,
    bias_sweep_configs,
    compare_methods,
    pretrain,
    result_summary,
    run,
    substitute_activation,
    write_comparison_csv,
    write_history_csv,
)
from qing_sparse.utils.export_tools import read_csv

SCHEDULE = RegularizationSchedule([
    RegularizationStage(1e-3, 10),
    RegularizationStage(5e-3, 16),
    RegularizationStage(5e-3, 24),
])


@pytest.fixture
def base_cfg(tiny_task_cfg):
    return TrainConfig(
        method=MethodConfig.vanilla_relu(),
        model=ModelConfig(d_model=4, d_ff=12, num_layers=2, output_dim=2),
        task=tiny_task_cfg,
        total_steps=24,
        pretrain_steps=6,
        substitution_steps=6,
        batch_size=4,
        eval_every=4,
        peak_lr=0.02,
        warmup_steps=0,
    )


@pytest.fixture
def task(base_cfg):
    return make_task(base_cfg.model, base_cfg.task, base_cfg.seed)


@pytest.fixture
def checkpoint(base_cfg, task):
    return pretrain(base_cfg, task, show_progress=False)


def progressive_cfg(base_cfg, shift=True):
    method = MethodConfig.progressive(SCHEDULE, SweepConfig([0.005, 0.01], tolerance=0.5), shift_threshold=shift)
    return replace(base_cfg, method=method)


def test_substitute_activation_is_pure(checkpoint):
    relu = substitute_activation(checkpoint, ActivationKind.relu())
    assert checkpoint.activation == ActivationKind.swish()
    restored = substitute_activation(relu, ActivationKind.swish())
    assert restored.flat_parameters().tobytes() == checkpoint.flat_parameters().tobytes()


def test_pretrain_produces_swish_checkpoint(base_cfg, task, checkpoint):
    assert checkpoint.activation == ActivationKind.swish()
    assert pretrain(base_cfg, task, show_progress=False).flat_parameters().tobytes() == \
        checkpoint.flat_parameters().tobytes()


def test_budget_parity_and_loss_decomposition(base_cfg, task, checkpoint):
    for method in (MethodConfig.original(), MethodConfig.vanilla_relu(), MethodConfig.fixed_l1(0.01)):
        result = run(replace(base_cfg, method=method), task=task, start_model=checkpoint, show_progress=False)
        assert result.history.updates == base_cfg.total_steps
        assert result.history.steps == [4, 8, 12, 16, 20, 24]
        for r in result.history.records:
            assert abs(r.train_loss - (r.task_loss + r.lam * r.l1_sum)) <= 1e-10 * max(1.0, r.train_loss)


def test_fixed_l1_with_zero_lambda_matches_vanilla_relu(base_cfg, task, checkpoint):
    vanilla = run(base_cfg, task=task, start_model=checkpoint, show_progress=False)
    fixed = run(replace(base_cfg, method=MethodConfig.fixed_l1(0.0)), task=task, start_model=checkpoint,
                show_progress=False)
    assert fixed.model.flat_parameters().tobytes() == vanilla.model.flat_parameters().tobytes()
    for a, b in zip(fixed.history.records, vanilla.history.records):
        assert (a.step, a.sparsity, a.train_loss, a.val_loss) == (b.step, b.sparsity, b.train_loss, b.val_loss)


def test_progressive_lambda_log_matches_schedule(base_cfg, task, checkpoint):
    result = run(progressive_cfg(base_cfg), task=task, start_model=checkpoint, show_progress=False)
    for r in result.history.records:
        expected = 0.0 if r.step <= 6 else lambda_at(SCHEDULE, r.step)
        assert r.lam == expected
    assert result.pre_shift_model is not None
    assert result.sweep is not None and result.sweep.thresholds == [0.005, 0.01]
    if result.chosen_threshold is not None:
        assert result.model.activation == ActivationKind.fatrelu(result.chosen_threshold)


def test_progressive_without_shift_keeps_relu(base_cfg, task, checkpoint):
    result = run(progressive_cfg(base_cfg, shift=False), task=task, start_model=checkpoint, show_progress=False)
    assert result.model.activation == ActivationKind.relu()
    assert result.sweep is None


def test_run_is_reproducible(base_cfg, task, checkpoint):
    cfg = progressive_cfg(base_cfg)
    a = run(cfg, task=task, start_model=checkpoint, show_progress=False)
    b = run(cfg, task=task, start_model=checkpoint, show_progress=False)
    assert a.model.flat_parameters().tobytes() == b.model.flat_parameters().tobytes()
    assert a.history.records == b.history.records


def test_run_builds_task_and_checkpoint_when_missing(base_cfg, task, checkpoint):
    implicit = run(base_cfg, show_progress=False)
    explicit = run(base_cfg, task=task, start_model=checkpoint, show_progress=False)
    assert implicit.model.flat_parameters().tobytes() == explicit.model.flat_parameters().tobytes()


def test_staged_session_matches_single_run(base_cfg, task, checkpoint):
    cfg = progressive_cfg(base_cfg)
    session = TrainingSession(cfg, task, checkpoint, show_progress=False)
    session.advance(cfg.resolved_substitution_steps)
    session.advance(cfg.total_steps)
    staged = session.finalize()
    single = run(cfg, task=task, start_model=checkpoint, show_progress=False)
    assert staged.model.flat_parameters().tobytes() == single.model.flat_parameters().tobytes()


def test_parallel_gradients_match_serial(base_cfg, task, checkpoint):
    serial = run(base_cfg, task=task, start_model=checkpoint, show_progress=False)
    parallel = run(replace(base_cfg, max_workers=3), task=task, start_model=checkpoint, show_progress=False)
    assert parallel.model.flat_parameters().tobytes() == serial.model.flat_parameters().tobytes()


def test_session_rejects_bad_steps(base_cfg, task, checkpoint):
    session = TrainingSession(base_cfg, task, checkpoint, show_progress=False)
    with pytest.raises(RejectedInputError):
        session.finalize()
    with pytest.raises(RejectedInputError):
        session.advance(base_cfg.total_steps + 1)


def test_divergence_aborts(base_cfg, task, checkpoint):
    with pytest.raises(NumericError):
        run(replace(base_cfg, peak_lr=1e30), task=task, start_model=checkpoint, show_progress=False)


def test_divergence_releases_gradient_threads(base_cfg, task, checkpoint):
    before = threading.active_count()
    with pytest.raises(NumericError):
        run(replace(base_cfg, peak_lr=1e30, max_workers=3), task=task, start_model=checkpoint, show_progress=False)
    assert threading.active_count() == before


def test_session_context_closes_pool(base_cfg, task, checkpoint):
    before = threading.active_count()
    with TrainingSession(replace(base_cfg, max_workers=2), task, checkpoint, show_progress=False) as session:
        session.advance(2)
    assert threading.active_count() == before
    session.close()


def test_gradient_overflow_reports_step_and_lambda(base_cfg, task, checkpoint, monkeypatch):
    session = TrainingSession(base_cfg, task, checkpoint, show_progress=False)
    real_step = session.optimizer.step

    def overflowing_step(params, grads, lr):
        return real_step(params, [np.full_like(g, np.inf) for g in grads], lr)

    monkeypatch.setattr(session.optimizer, "step", overflowing_step)
    before = session.model.flat_parameters().tobytes()
    with pytest.raises(DivergenceError) as info:
        session.advance(1)
    assert (info.value.step, info.value.lam) == (1, 0.0)
    assert "non-finite gradient norm" in str(info.value)
    assert session.model.flat_parameters().tobytes() == before


def test_train_config_diagnostics(base_cfg):
    assert base_cfg.diagnostics() == []
    problems = replace(base_cfg, substitution_steps=24).diagnostics()
    assert any("substitution_steps" in p for p in problems)
    problems = replace(progressive_cfg(base_cfg), substitution_steps=12).diagnostics()
    assert any("T_1" in p for p in problems)
    assert TrainConfig(method=MethodConfig.vanilla_relu(), total_steps=100).resolved_substitution_steps == 20
    with pytest.raises(ConfigurationError):
        run(replace(base_cfg, batch_size=0))


def test_compare_methods_table(tmp_path, base_cfg, task, checkpoint):
    configs = [base_cfg, replace(base_cfg, method=MethodConfig.fixed_l1(0.01)), progressive_cfg(base_cfg)]
    configs += bias_sweep_configs(base_cfg, [0.1, 0.5])
    probes = task.corpus_samples()
    table = compare_methods(configs, task, checkpoint, probe_corpora=probes)

    methods = [r.method for r in table.rows]
    assert methods == [
        "vanilla_relu", "fixed_l1", "progressive_noshift", "progressive", "shifted_relu_b0.1", "shifted_relu_b0.5",
    ]
    assert table.row("fixed_l1").lam == 0.01
    assert table.row("shifted_relu_b0.5").activation == "ShiftedReLU(b=0.5)"
    assert set(table.row("progressive").corpus_sparsity) == set(probes)
    assert all(r.history.updates == base_cfg.total_steps for r in table.results)

    rows = read_csv(write_comparison_csv(table, tmp_path / "comparison.csv"))
    assert [r["method"] for r in rows] == methods
    assert "sparsity_qa" in rows[0]
    rows = read_csv(write_history_csv([r.history for r in table.results], tmp_path / "history.csv"))
    assert len(rows) == 6 * len(table.results)
    assert set(rows[0]) >= {"method", "step", "sparsity", "train_loss", "task_loss", "l1_sum", "val_loss", "lambda", "lr"}


def test_compare_methods_reuses_results(base_cfg, task, checkpoint):
    done = run(base_cfg, task=task, start_model=checkpoint, show_progress=False)
    table = compare_methods([base_cfg], task, checkpoint, results={"vanilla_relu": done})
    assert table.results[0] is done


def test_compare_methods_requires_shared_budget(base_cfg, task, checkpoint):
    with pytest.raises(ConfigurationError):
        compare_methods([base_cfg, replace(base_cfg, total_steps=30)], task, checkpoint)


def test_result_summary(base_cfg, task, checkpoint):
    summary = result_summary(run(progressive_cfg(base_cfg), task=task, start_model=checkpoint, show_progress=False))
    assert summary["method"] == "progressive"
    assert summary["updates"] == base_cfg.total_steps
    assert "pre_shift_sparsity" in summary


def _smoothed(values, window=5):
    return [float(np.mean(values[i:i + window])) for i in range(len(values) - window + 1)]


@pytest.mark.slow
def test_reference_orderings():
    """参考配置上的定性顺序：渐进正则 > 基线稀疏度，固定L1损失更高，偏置越大越稀疏"""
    from conftest import EXAMPLE_CONFIGS

    from qing_sparse.utils.config_manager import get_config_manager

    manager = get_config_manager()
    for seed in (0, 1, 2):
        config = manager.load_config(EXAMPLE_CONFIGS / "reference.json")
        config["seeds"] = {key: seed for key in config["seeds"]}
        settings = manager.build(config)
        task = make_task(settings.model, settings.task, settings.seeds["task"])
        start = pretrain(settings.training, task, show_progress=False)

        configs = [settings.train_config(m) for m in settings.methods]
        configs += bias_sweep_configs(settings.training, settings.bias_sweep)
        table = compare_methods(configs, task, start)
        progressive = table.row("progressive")
        fixed = table.row("fixed_l1")
        vanilla = table.row("vanilla_relu")

        assert progressive.sparsity >= 0.80
        assert vanilla.sparsity <= 0.65
        assert fixed.sparsity >= table.row("progressive_noshift").sparsity
        assert fixed.val_loss >= 1.1 * progressive.val_loss

        result = next(r for r in table.results if r.method.name == "progressive")
        incremental = [r.sparsity for r in result.history.records
                       if r.step > settings.schedule.stage_boundaries[0]]
        smoothed = _smoothed(incremental)
        assert all(b >= a - 1e-3 for a, b in zip(smoothed, smoothed[1:]))

        pre, post = result.pre_shift_report.per_layer, result.final_report.per_layer
        gains = [b - a for a, b in zip(pre, post)]
        assert int(np.argmax(gains)) == int(np.argmin(pre))

        biased = [table.row(f"shifted_relu_b{b:g}") for b in settings.bias_sweep]
        assert all(b.sparsity > a.sparsity for a, b in zip(biased, biased[1:]))
        assert all(b.val_loss >= a.val_loss for a, b in zip(biased, biased[1:]))
