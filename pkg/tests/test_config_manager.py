# -*- coding: utf-8 -*-
import pytest
from conftest import EXAMPLE_CONFIGS, tiny_pipeline_config

from qing_sparse.core.activations import ActivationKind
from qing_sparse.core.errors import ConfigParseError, ConfigurationError
from qing_sparse.training.method_framework import MethodType
from qing_sparse.utils.config_manager import (
    SEED_KEYS,
    SparseConfigManager,
    apply_seed_override,
    get_config_manager,
    merge_config,
)


@pytest.fixture
def manager():
    return SparseConfigManager()


def tiny_config(manager, **overrides):
    return merge_config(manager.default_config, tiny_pipeline_config(**overrides))


def test_default_config_is_valid(manager):
    config = manager.load_config()
    assert manager.validate(config) == []
    assert config is not manager.default_config


def test_reference_config(manager):
    settings = manager.build(manager.load_config(EXAMPLE_CONFIGS / "reference.json"))
    assert [m.name for m in settings.methods] == ["original", "vanilla_relu", "shifted_relu", "fixed_l1", "progressive"]
    assert settings.target_method.method_type is MethodType.PROGRESSIVE
    assert settings.schedule.stage_boundaries == [600, 1000, 1200, 1600, 2000]
    assert settings.training.resolved_substitution_steps == 400
    assert settings.bench.activation == ActivationKind.relu()
    assert settings.method("fixed_l1").fixed_lambda is None


def test_preset_config(manager):
    settings = manager.build(manager.load_config(EXAMPLE_CONFIGS / "preset_7b.json"))
    assert settings.schedule.num_stages == 5
    assert settings.schedule.end_step == 3000
    assert settings.bias_sweep == []


def test_invalid_schedule_names_both_violations(manager):
    problems = manager.validate(manager.load_config(EXAMPLE_CONFIGS / "invalid_schedule.json"))
    assert any("non-decreasing peaks" in p for p in problems)
    assert any("strictly increasing boundaries" in p for p in problems)


def test_shifted_relu_bench_rejected(manager):
    config = manager.load_config(EXAMPLE_CONFIGS / "invalid_shifted_bench.json")
    problems = manager.validate(config)
    assert any("unsupported activation for sparse kernels" in p for p in problems)
    with pytest.raises(ConfigurationError) as info:
        manager.build(config)
    assert info.value.diagnostics == problems

    config["bench"]["enabled"] = False
    assert manager.validate(config) == []


def test_parse_error_reports_position(tmp_path, manager):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": {"d_model": 4,,}\n}\n', encoding="utf-8")
    with pytest.raises(ConfigParseError) as info:
        manager.load_config(path)
    assert info.value.line == 2
    assert info.value.column > 1
    assert "line 2" in str(info.value)

    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigParseError):
        manager.load_config(path)


def test_dimension_and_method_diagnostics(manager):
    config = manager.load_config()
    config["model"]["d_ff"] = 0
    assert any("model.d_ff" in p for p in manager.validate(config))

    config = manager.load_config()
    config["methods"]["run"] = ["vanilla_relu", "deja_vu"]
    assert manager.validate(config)

    config = manager.load_config()
    config["methods"]["target"] = "fixed_l1"
    config["methods"]["run"] = ["vanilla_relu"]
    config["bench"]["enabled"] = False
    assert any("methods.target" in p for p in manager.validate(config))

    config = manager.load_config()
    config["seeds"]["task"] = -1
    assert any("seeds.task" in p for p in manager.validate(config))


def test_unknown_method_lookup(manager):
    settings = manager.build(tiny_config(manager))
    with pytest.raises(ConfigurationError):
        settings.method("original")


def test_explicit_bench_activation_wins(manager):
    config = tiny_config(manager, bench={"activation": {"kind": "fatrelu", "threshold": 0.02}})
    assert manager.build(config).bench.activation == ActivationKind.fatrelu(0.02)


def test_merge_config_is_deep_and_pure():
    base = {"a": {"x": 1, "y": [1, 2]}, "b": 2}
    merged = merge_config(base, {"a": {"y": [3]}, "c": 4})
    assert merged == {"a": {"x": 1, "y": [3]}, "b": 2, "c": 4}
    assert base == {"a": {"x": 1, "y": [1, 2]}, "b": 2}


def test_seed_override(manager):
    config = tiny_config(manager)
    assert apply_seed_override(config, None) is config
    overridden = apply_seed_override(config, 7)
    assert overridden["seeds"] == {key: 7 for key in SEED_KEYS}
    assert config["seeds"]["model"] == 0
    settings = manager.build(overridden)
    assert settings.seed_list == [7] * len(SEED_KEYS)
    assert settings.training.seed == 7 and settings.bench.seed == 7


def test_save_config_template_round_trip(tmp_path, manager):
    path = tmp_path / "default.json"
    assert manager.save_config(path)
    assert manager.load_config(path) == manager.default_config


def test_get_config_manager_is_shared():
    assert get_config_manager() is get_config_manager()
