# -*- coding: utf-8 -*-
import numpy as np
import pytest
from conftest import zero_model

from qing_sparse.core.activations import ActivationKind
from qing_sparse.core.errors import RejectedInputError
from qing_sparse.core.gated_ffn import (
    GatedFFNLayer,
    ModelConfig,
    ToyModel,
    backward_model,
    forward_layer,
    forward_model,
    init_model,
    load_model,
    save_model,
)
from qing_sparse.core.numerics import SeededRng, grad_check
from qing_sparse.training.sparsity_metrics import measure, sparsity_of


def test_forward_layer_all_zero_weights():
    model = zero_model(3, 5, 1, ActivationKind.relu())
    out, trace = forward_layer(model.layers[0], np.array([1.0, -2.0, 0.5]))
    assert not out.any()
    assert not trace.x1.any()
    assert sparsity_of(trace.x1) == 1.0


def test_forward_layer_hand_case():
    layer = GatedFFNLayer(
        W_s=np.array([[1.0, 0.0], [-1.0, 0.0]]),
        W_1=np.eye(2),
        W_2=np.eye(2),
        activation=ActivationKind.relu(),
    )
    out, trace = forward_layer(layer, np.array([1.0, 1.0]))
    assert trace.s.tolist() == [1.0, 0.0]
    assert trace.x1.tolist() == [1.0, 0.0]
    assert out.tolist() == [1.0, 0.0]


def test_relu_gating_zeroes_are_exact(small_model, rng):
    model = small_model.with_activation(ActivationKind.relu())
    for x in rng.normal(size=(20, model.d_model)):
        _, trace = forward_model(model, x)
        for layer in trace.layers:
            assert np.all(layer.x1[layer.z <= 0] == 0.0)
            assert np.all(layer.x1[layer.s == 0] == 0.0)
            np.testing.assert_array_equal(layer.x1, layer.s * layer.u)


def test_forward_layer_dimension_mismatch(small_model):
    with pytest.raises(RejectedInputError):
        forward_layer(small_model.layers[0], np.zeros(small_model.d_model + 1))


def test_single_layer_model_is_residual_plus_block(rng):
    model = init_model(ModelConfig(d_model=4, d_ff=6, num_layers=1, output_dim=4), rng)
    model.head[...] = np.eye(4)
    x = rng.normal(size=4)
    output, _ = forward_model(model, x)
    block, _ = forward_layer(model.layers[0], x)
    np.testing.assert_allclose(output, x + block, rtol=1e-12)


def test_zero_weight_stack_passes_input_through(rng):
    model = zero_model(4, 6, 3, ActivationKind.swish())
    model.head[...] = rng.normal(size=(4, 4))
    x = rng.normal(size=4)
    output, _ = forward_model(model, x)
    np.testing.assert_allclose(output, model.head @ x, rtol=1e-12)


def test_forward_is_deterministic(small_model, rng):
    x = rng.normal(size=small_model.d_model)
    _, a = forward_model(small_model, x)
    _, b = forward_model(small_model, x)
    for la, lb in zip(a.layers, b.layers):
        assert la.x1.tobytes() == lb.x1.tobytes()
        assert la.z.tobytes() == lb.z.tobytes()


def _quadratic_loss_check(model: ToyModel, x: np.ndarray, target: np.ndarray, lam: float) -> float:
    def loss(flat):
        m = model.load_flat_parameters(flat)
        output, trace = forward_model(m, x)
        l1 = sum(float(np.abs(layer.x1).sum()) for layer in trace.layers)
        return 0.5 * float(np.sum((output - target) ** 2)) + lam * l1

    def grad(flat):
        m = model.load_flat_parameters(flat)
        output, trace = forward_model(m, x)
        return backward_model(m, trace, output - target, reg=lam).flatten()

    return grad_check(loss, grad, model.flat_parameters(), eps=1e-5)


@pytest.mark.parametrize("activation", [ActivationKind.swish(), ActivationKind.relu()], ids=str)
def test_backward_passes_grad_check_without_regularization(activation, rng):
    model = init_model(ModelConfig(d_model=4, d_ff=6, num_layers=2, output_dim=3, activation=activation), rng)
    x, target = rng.normal(size=4), rng.normal(size=3)
    assert _quadratic_loss_check(model, x, target, 0.0) < 1e-5


def test_backward_passes_grad_check_with_regularization():
    # 寻找一个所有 x_1 与 z 坐标都远离0的参数点
    for seed in range(200):
        rng = SeededRng(seed)
        model = init_model(ModelConfig(d_model=3, d_ff=4, num_layers=2, output_dim=2,
                                       activation=ActivationKind.swish()), rng)
        x, target = rng.normal(size=3), rng.normal(size=2)
        _, trace = forward_model(model, x)
        if all(np.min(np.abs(layer.x1)) > 1e-3 for layer in trace.layers):
            break
    else:
        pytest.fail("no parameter point away from L1 kinks")
    assert _quadratic_loss_check(model, x, target, 0.05) < 1e-5


def test_dead_layer_has_no_l1_gradient(rng):
    model = zero_model(3, 4, 1, ActivationKind.relu())
    model.head[...] = rng.normal(size=(3, 3))
    x = rng.normal(size=3)
    output, trace = forward_model(model, x)
    plain = backward_model(model, trace, output.copy(), reg=0.0)
    regularized = backward_model(model, trace, output.copy(), reg=10.0)
    np.testing.assert_array_equal(plain.flatten(), regularized.flatten())


def test_backward_rejects_stale_trace(small_model, rng):
    x = rng.normal(size=small_model.d_model)
    output, trace = forward_model(small_model, x)
    small_model.mark_updated()
    with pytest.raises(RejectedInputError):
        backward_model(small_model, trace, output)
    other = small_model.copy()
    with pytest.raises(RejectedInputError):
        backward_model(other, trace, output)


def test_trace_of_freed_model_never_matches_new_model(small_model_cfg):
    model = init_model(small_model_cfg, SeededRng(5))
    output, trace = forward_model(model, SeededRng(6).normal(size=small_model_cfg.d_model))
    del model
    tokens = set()
    # 新对象通常复用已回收对象的地址，版本号也同为0
    for _ in range(20):
        fresh = init_model(small_model_cfg, SeededRng(5))
        tokens.add(fresh.token)
        with pytest.raises(RejectedInputError):
            backward_model(fresh, trace, output)
    assert len(tokens) == 20


def test_init_model_is_deterministic_and_bounded():
    cfg = ModelConfig(d_model=16, d_ff=32, num_layers=2, output_dim=4, init_scale=0.5)
    a, b = init_model(cfg, SeededRng(3)), init_model(cfg, SeededRng(3))
    assert a.flat_parameters().tobytes() == b.flat_parameters().tobytes()
    assert np.max(np.abs(a.flat_parameters())) <= 0.5 / np.sqrt(16)


def test_init_model_shape_accounting():
    model = init_model(ModelConfig(d_model=1, d_ff=1, num_layers=1, output_dim=2), SeededRng(0))
    assert model.num_parameters() == 3 + 2


def test_init_model_rejects_non_positive_scale():
    with pytest.raises(RejectedInputError):
        init_model(ModelConfig(init_scale=0.0), SeededRng(0))


def test_relu_init_sparsity_is_about_half():
    cfg = ModelConfig(d_model=32, d_ff=128, num_layers=2, output_dim=4, activation=ActivationKind.relu())
    model = init_model(cfg, SeededRng(0))
    corpus = list(SeededRng(1).normal(size=(1000, 32)))
    assert abs(measure(model, corpus).average - 0.5) <= 0.05


def test_with_activation_keeps_weights(small_model):
    relu = small_model.with_activation(ActivationKind.relu())
    back = relu.with_activation(small_model.activation)
    assert back.flat_parameters().tobytes() == small_model.flat_parameters().tobytes()
    assert all(layer.activation == ActivationKind.relu() for layer in relu.layers)
    assert small_model.activation == ActivationKind.swish()


def test_save_and_load_model(tmp_path, small_model):
    model = small_model.with_activation(ActivationKind.fatrelu(0.01))
    path = save_model(model, tmp_path / "model.json", {"stage": "test"})
    assert path.with_suffix(".bin").exists()
    loaded = load_model(path)
    assert loaded.flat_parameters().tobytes() == model.flat_parameters().tobytes()
    assert loaded.activation == ActivationKind.fatrelu(0.01)
