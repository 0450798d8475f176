# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest

from qing_sparse.core.errors import ConfigurationError, RejectedInputError
from qing_sparse.core.gated_ffn import ForwardTrace, LayerTrace
from qing_sparse.training.regularization import (
    SCHEDULE_PRESETS,
    LrSchedule,
    RegularizationSchedule,
    RegularizationStage,
    l1_loss,
    lambda_at,
    lr_at,
    schedule_diagnostics,
    schedule_preset,
)


def make_schedule(peaks, ends):
    return RegularizationSchedule([RegularizationStage(p, e) for p, e in zip(peaks, ends)])


def trace_with(x1_per_layer):
    layers = []
    for x1 in x1_per_layer:
        x1 = np.asarray(x1, dtype=np.float64)
        layers.append(LayerTrace(x=x1, z=x1, s=x1, u=x1, x1=x1))
    return ForwardTrace(layers=layers, final_hidden=np.zeros(1), output=np.zeros(1))


def test_lambda_at_two_stage_examples():
    schedule = make_schedule([0.1, 0.5], [100, 200])
    assert lambda_at(schedule, 1) == 0.1
    assert lambda_at(schedule, 100) == 0.1
    assert abs(lambda_at(schedule, 150) - 0.3) < 1e-12
    assert abs(lambda_at(schedule, 200) - 0.5) < 1e-12


def test_lambda_at_endpoints_and_midpoints_with_constant_stage():
    peaks, ends = [0.01, 0.05, 0.05, 0.2], [10, 30, 50, 90]
    schedule = make_schedule(peaks, ends)
    for i in range(1, len(peaks)):
        start, end = ends[i - 1], ends[i]
        assert abs(lambda_at(schedule, start) - peaks[i - 1]) < 1e-12
        assert abs(lambda_at(schedule, (start + end) // 2) - (peaks[i - 1] + peaks[i]) / 2) < 1e-12
        assert abs(lambda_at(schedule, end) - peaks[i]) < 1e-12
    assert all(lambda_at(schedule, t) == 0.05 for t in range(31, 51))


def test_lambda_at_non_decreasing_and_smooth_at_endpoints():
    peaks, ends = [0.002, 0.01, 0.01, 0.05, 0.05], [600, 1000, 1200, 1600, 2000]
    schedule = make_schedule(peaks, ends)
    values = [lambda_at(schedule, t) for t in range(1, 2001)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    for i in range(1, len(peaks)):
        if peaks[i] == peaks[i - 1]:
            continue
        linear_step = (peaks[i] - peaks[i - 1]) / (ends[i] - ends[i - 1])
        assert abs(lambda_at(schedule, ends[i - 1] + 1) - peaks[i - 1]) < linear_step
        assert abs(peaks[i] - lambda_at(schedule, ends[i] - 1)) < linear_step


def test_lambda_at_out_of_range():
    schedule = make_schedule([0.1, 0.5], [100, 200])
    with pytest.raises(RejectedInputError, match="out of range"):
        lambda_at(schedule, 0)
    with pytest.raises(RejectedInputError):
        lambda_at(schedule, 201)


def test_schedule_diagnostics_name_the_violation():
    diagnostics = schedule_diagnostics([5e-2, 5e-3], [100, 200])
    assert any("non-decreasing peaks" in d for d in diagnostics)
    diagnostics = schedule_diagnostics([1e-3, 1e-2], [100, 100])
    assert any("strictly increasing boundaries" in d for d in diagnostics)
    assert schedule_diagnostics([1e-3, 1e-2], [100, 200]) == []
    with pytest.raises(ConfigurationError) as info:
        make_schedule([5e-2, 5e-3], [100, 100])
    assert len(info.value.diagnostics) == 2


def test_final_stage_mean():
    schedule = make_schedule([0.1, 0.5], [100, 200])
    expected = math.fsum(lambda_at(schedule, t) for t in range(101, 201)) / 100
    assert schedule.final_stage_mean() == pytest.approx(expected, abs=1e-15)
    # 平均区间包含终点 T_S，均值略高于中点值
    assert 0.3 < schedule.final_stage_mean() < 0.31
    assert make_schedule([0.2], [50]).final_stage_mean() == 0.2


def test_l1_loss_examples():
    total, per_layer = l1_loss(trace_with([[0, 0.3, -0.2, 0]]), 2.0)
    assert total == pytest.approx(1.0, abs=1e-15)
    assert per_layer == [pytest.approx(1.0, abs=1e-15)]
    assert l1_loss(trace_with([[1.0, -4.0]]), 0.0)[0] == 0.0

    x1 = [0.5, -0.25, 0.0]
    single, _ = l1_loss(trace_with([x1]), 0.7)
    triple, per_layer = l1_loss(trace_with([x1, x1, x1]), 0.7)
    assert triple == pytest.approx(3 * single, rel=1e-15)
    assert len(per_layer) == 3


def test_l1_loss_rejects_negative_lambda():
    with pytest.raises(RejectedInputError):
        l1_loss(trace_with([[1.0]]), -0.1)


def test_lr_schedule_examples():
    schedule = LrSchedule(peak_lr=0.1, total_steps=110, warmup_steps=10)
    assert lr_at(schedule, 0) == 0.0
    assert lr_at(schedule, 5) == pytest.approx(0.05)
    assert lr_at(schedule, 10) == pytest.approx(0.1)
    assert lr_at(schedule, 60) == pytest.approx(0.05)
    assert lr_at(schedule, 110) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(RejectedInputError):
        lr_at(schedule, 111)


def test_lr_schedule_validation_and_default_warmup():
    with pytest.raises(ConfigurationError):
        LrSchedule(peak_lr=0.1, total_steps=10, warmup_steps=10)
    with pytest.raises(ConfigurationError):
        LrSchedule(peak_lr=0.0, total_steps=10)
    assert LrSchedule.with_default_warmup(0.1, 2000).warmup_steps == 20


@pytest.mark.parametrize("name", sorted(SCHEDULE_PRESETS))
def test_schedule_preset_keeps_shape(name):
    schedule = schedule_preset(name, total_steps=3000, substitution_steps=900, lambda_scale=0.1)
    _, table = SCHEDULE_PRESETS[name]
    assert schedule.num_stages == len(table)
    assert schedule.end_step == 3000
    assert schedule.stage_boundaries[0] > 900
    assert schedule.peak_factors == pytest.approx([0.1 * peak for peak, _ in table])


def test_schedule_preset_7b_peaks():
    schedule = schedule_preset("7b", total_steps=2000, substitution_steps=400)
    assert schedule.peak_factors == [5e-3, 5e-2, 5e-2, 5e-1, 5e-1]


def test_schedule_preset_errors():
    with pytest.raises(ConfigurationError):
        schedule_preset("70b", 1000, 100)
    with pytest.raises(ConfigurationError):
        schedule_preset("7b", 103, 100)
