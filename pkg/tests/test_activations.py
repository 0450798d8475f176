# -*- coding: utf-8 -*-
import numpy as np
import pytest

from qing_sparse.core.activations import ActivationKind, ActivationTag, apply, derivative
from qing_sparse.core.errors import ConfigurationError, RejectedInputError
from qing_sparse.core.numerics import SeededRng, grad_check

ALL_KINDS = [
    ActivationKind.swish(),
    ActivationKind.relu(),
    ActivationKind.shifted_relu(0.3),
    ActivationKind.fatrelu(0.01),
]


def test_apply_examples():
    assert apply(ActivationKind.fatrelu(0.01), 0.005) == 0.0
    assert apply(ActivationKind.fatrelu(0.01), 0.02) == 0.02
    assert apply(ActivationKind.relu(), -1.5) == 0.0
    assert apply(ActivationKind.swish(), 0.0) == 0.0


def test_fatrelu_threshold_is_inclusive():
    assert apply(ActivationKind.fatrelu(0.5), 0.5) == 0.5
    assert derivative(ActivationKind.fatrelu(0.5), 0.5) == 1.0


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
def test_zero_preservation(kind):
    assert apply(kind, 0.0) == 0.0


def test_fatrelu_zero_threshold_is_relu():
    assert ActivationKind.fatrelu(0.0) == ActivationKind.relu()
    z = SeededRng(0).normal(size=1000)
    assert np.array_equal(apply(ActivationKind.fatrelu(0), z), apply(ActivationKind.relu(), z))


def test_fatrelu_outputs_zero_or_identity():
    z = SeededRng(1).normal(size=1000)
    out = apply(ActivationKind.fatrelu(0.2), z)
    assert np.all((out == 0) | (out == z))


def test_shifted_relu_is_relu_of_shift():
    z = SeededRng(2).normal(size=1000)
    np.testing.assert_array_equal(
        apply(ActivationKind.shifted_relu(0.3), z), apply(ActivationKind.relu(), z - 0.3)
    )


def test_derivative_examples():
    assert derivative(ActivationKind.relu(), 0.0) == 0.0
    assert derivative(ActivationKind.fatrelu(0.01), 0.02) == 1.0
    assert derivative(ActivationKind.shifted_relu(0.3), 0.3) == 0.0


def test_swish_derivative_matches_central_difference():
    kind = ActivationKind.swish()
    error = grad_check(
        lambda p: apply(kind, float(p[0])), lambda p: np.array([derivative(kind, float(p[0]))]), np.array([5.0])
    )
    assert error < 1e-8


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
def test_derivative_matches_central_difference_away_from_kinks(kind):
    points = SeededRng(3).uniform(-3.0, 3.0, size=1000)
    kink = kind.threshold if kind.tag is ActivationTag.FATRELU else kind.bias
    points = points[np.abs(points - kink) > 1e-3]
    for z in points:
        error = grad_check(
            lambda p: apply(kind, float(p[0])),
            lambda p: np.array([derivative(kind, float(p[0]))]),
            np.array([z]),
        )
        assert error < 1e-6, (kind, z)


def test_array_and_scalar_inputs():
    out = apply(ActivationKind.relu(), np.array([-1.0, 2.0]))
    assert isinstance(out, np.ndarray) and out.tolist() == [0.0, 2.0]
    assert isinstance(apply(ActivationKind.relu(), 2.0), float)
    assert apply(ActivationKind.relu(), np.array([1.0], dtype=np.float32)).dtype == np.float32


def test_invalid_parameters_rejected():
    with pytest.raises(RejectedInputError):
        ActivationKind.fatrelu(-0.1)
    with pytest.raises(RejectedInputError):
        ActivationKind.shifted_relu(-0.1)


def test_config_round_trip_and_unknown_kind():
    for kind in ALL_KINDS:
        assert ActivationKind.from_config(kind.to_config()) == kind
    assert ActivationKind.from_config("relu") == ActivationKind.relu()
    with pytest.raises(ConfigurationError):
        ActivationKind.from_config("gelu")


def test_sparse_kernel_support():
    assert ActivationKind.relu().supports_sparse_kernels
    assert ActivationKind.fatrelu(0.01).supports_sparse_kernels
    assert not ActivationKind.shifted_relu(0.1).supports_sparse_kernels
    assert not ActivationKind.swish().supports_sparse_kernels
