"""Tests for the differentiable primitives."""

import numpy as np
import pytest

from src.back.constants import OP_GRAD_TOLERANCE
from src.back.errors import ConfigError, InputError, NumericError, OpOrderError, ShapeError
from src.back.selfcheck import op_gradient_cases
from src.back.tensor_core import (
    BatchNorm1d,
    BCELoss,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    OpContext,
    ReLU,
    as_tensor,
    batchnorm1d,
    bce_loss,
    conv1d,
    conv_output_length,
    dense,
    dropout,
    finite_difference_check,
    maxpool1d,
    relu,
    sigmoid,
)


def _conv_func(stride):
    def func(x, w, b):
        ctx = OpContext()
        out = Conv1d.forward(ctx, x, w, b, stride)
        return out, lambda g: Conv1d.backward(ctx, g)
    return func


class TestTensor:
    def test_zero_dimension_rejected(self):
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((2, 0, 3)))

    def test_row_major_layout(self):
        t = as_tensor(np.arange(24).reshape(2, 3, 4))
        assert t.flags["C_CONTIGUOUS"]
        assert t.dtype == np.float32
        assert t[1, 2, 3] == t.ravel()[1 * 12 + 2 * 4 + 3]


class TestConv1d:
    def test_identity_kernel(self):
        x = np.array([[[1, 2, 3, 4]]], dtype=np.float64)
        out = conv1d(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_same_padding_cross_correlation(self):
        x = np.array([[[1, 2, 3, 4]]], dtype=np.float64)
        out = conv1d(x, np.array([[[1.0, 0.0, -1.0]]]), np.zeros(1))
        np.testing.assert_allclose(out[0, 0], [-2, -2, -2, 3])

    @pytest.mark.parametrize("stride", [1, 4])
    def test_output_length_is_ceil(self, stride):
        w = np.ones((1, 1, 16))
        for length in (1, 3, 15, 16, 17, 63, 255, 4096):
            out = conv1d(np.ones((1, 1, length)), w, np.zeros(1), stride)
            assert out.shape[-1] == conv_output_length(length, stride) == -(-length // stride)

    def test_gradients_stride_4(self, rng):
        inputs = [rng.standard_normal((2, 3, 32)), rng.standard_normal((4, 3, 16)), rng.standard_normal(4)]
        assert finite_difference_check(_conv_func(4), inputs) < OP_GRAD_TOLERANCE

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv1d(np.zeros((1, 3, 8)), np.zeros((2, 4, 3)), np.zeros(2))

    def test_backward_before_forward(self):
        with pytest.raises(OpOrderError):
            Conv1d.backward(OpContext(), np.zeros((1, 1, 4)))


class TestBatchNorm1d:
    def test_population_variance(self):
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        out, _, _ = batchnorm1d(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), training=True, eps=1e-12)
        np.testing.assert_allclose(out[0, 0], [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)

    def test_standardized_input_is_fixed_point(self, rng):
        x = rng.standard_normal((4, 2, 64))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        out, _, _ = batchnorm1d(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=True)
        np.testing.assert_allclose(out, x, atol=1e-3)

    def test_training_statistics(self, rng):
        x = rng.standard_normal((8, 3, 16)) * 5 + 2
        out, _, _ = batchnorm1d(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=True)
        assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-3)

    def test_running_statistics(self, rng):
        x = rng.standard_normal((4, 2, 8)) + 3
        mean = np.zeros(2)
        var = np.ones(2)
        _, new_mean, new_var = batchnorm1d(x, np.ones(2), np.zeros(2), mean, var, training=True, momentum=0.9)
        np.testing.assert_allclose(new_mean, 0.1 * x.mean(axis=(0, 2)))
        np.testing.assert_allclose(new_var, 0.9 + 0.1 * x.var(axis=(0, 2)))
        # inference leaves the statistics untouched
        _, same_mean, same_var = batchnorm1d(x, np.ones(2), np.zeros(2), mean, var, training=False)
        assert same_mean is mean and same_var is var

    def test_nonpositive_eps(self):
        with pytest.raises(ConfigError):
            batchnorm1d(np.zeros((2, 1, 2)), np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), eps=0.0)

    def test_training_needs_two_values(self):
        with pytest.raises(InputError):
            batchnorm1d(np.zeros((1, 1, 1)), np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), training=True)


class TestReLU:
    def test_forward(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_subgradient_at_zero(self):
        ctx = OpContext()
        ReLU.forward(ctx, np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(ReLU.backward(ctx, np.ones(3)), [0, 0, 1])

    def test_away_from_kink(self, rng):
        x = rng.standard_normal(50)
        x = np.where(np.abs(x) < 1e-4, 1.0, x)

        def func(value):
            ctx = OpContext()
            return ReLU.forward(ctx, value), lambda g: (ReLU.backward(ctx, g),)

        assert finite_difference_check(func, [x]) < 1e-6


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = rng.standard_normal((2, 3, 4))
        assert dropout(x, 0.0, training=True, rng=rng) is x
        assert dropout(x, 0.0, training=False) is x

    def test_inference_identity(self, rng):
        x = rng.standard_normal((2, 3, 4))
        assert dropout(x, 0.2, training=False) is x

    def test_inverted_scaling_mean(self, rng):
        out = dropout(np.ones(100_000), 0.5, training=True, rng=rng)
        assert abs(out.mean() - 1.0) < 0.01
        assert set(np.unique(out)) <= {0.0, 2.0}

    def test_backward_reuses_mask(self, rng):
        ctx = OpContext(training=True, rng=rng)
        out = Dropout.forward(ctx, np.ones(1000), 0.3)
        np.testing.assert_array_equal(Dropout.backward(ctx, np.ones(1000)), out)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_invalid_rate(self, rate):
        with pytest.raises(ConfigError):
            dropout(np.ones(3), rate)


class TestMaxPool1d:
    def test_forward(self):
        np.testing.assert_array_equal(maxpool1d(np.array([[[1.0, 3.0, 2.0, 4.0]]]), 2)[0, 0], [3, 4])

    def test_window_one_identity(self, rng):
        x = rng.standard_normal((2, 3, 5))
        np.testing.assert_array_equal(maxpool1d(x, 1), x)

    def test_backward_routes_to_argmax(self):
        ctx = OpContext()
        MaxPool1d.forward(ctx, np.array([[[1.0, 3.0, 2.0, 4.0]]]), 2)
        np.testing.assert_array_equal(MaxPool1d.backward(ctx, np.ones((1, 1, 2)))[0, 0], [0, 1, 0, 1])

    def test_first_maximum_wins_ties(self):
        ctx = OpContext()
        MaxPool1d.forward(ctx, np.array([[[5.0, 5.0]]]), 2)
        np.testing.assert_array_equal(MaxPool1d.backward(ctx, np.ones((1, 1, 1)))[0, 0], [1, 0])

    def test_tail_padding(self):
        out = maxpool1d(np.array([[[-1.0, -2.0, -3.0]]]), 2)
        np.testing.assert_array_equal(out[0, 0], [-1.0, 0.0])


class TestDense:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(dense(x, np.eye(4), np.zeros(4)), x)

    def test_arithmetic(self):
        np.testing.assert_allclose(dense(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([0.5])), [[3.5]])

    def test_gradient_precision(self, rng):
        def func(x, w, b):
            ctx = OpContext()
            return Dense.forward(ctx, x, w, b), lambda g: Dense.backward(ctx, g)

        inputs = [rng.standard_normal((3, 5)), rng.standard_normal((5, 2)), rng.standard_normal(2)]
        assert finite_difference_check(func, inputs) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dense(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros(1))


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_strictly_inside_unit_interval(self, dtype):
        out = sigmoid(np.array([-1e4, -40.0, 40.0, 1e4], dtype=dtype))
        assert np.all(out > 0) and np.all(out < 1)
        assert np.all(np.isfinite(out))


class TestBCELoss:
    def test_perfect_prediction(self):
        labels = np.array([[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]])
        assert 0 <= bce_loss(labels.copy(), labels) <= 1e-6

    def test_half_probability_is_ln2(self, rng):
        labels = (rng.random((4, 6)) < 0.5).astype(float)
        assert bce_loss(np.full((4, 6), 0.5), labels) == pytest.approx(np.log(2), abs=1e-12)

    def test_positive_when_wrong(self, rng):
        probs = rng.uniform(0.01, 0.99, (5, 6))
        labels = (rng.random((5, 6)) < 0.5).astype(float)
        assert bce_loss(probs, labels) > 0

    def test_gradient_at_clamp(self):
        ctx = OpContext()
        BCELoss.forward(ctx, np.array([[0.0]]), np.array([[1.0]]))
        grad = BCELoss.backward(ctx, 1.0)
        assert np.isfinite(grad).all() and grad[0, 0] < 0

    def test_rejects_soft_labels(self):
        with pytest.raises(InputError):
            bce_loss(np.full((1, 6), 0.5), np.full((1, 6), 0.5))


class TestFiniteDifferenceCheck:
    @pytest.mark.parametrize("case", range(11))
    def test_every_op(self, case):
        name, func, inputs = op_gradient_cases(np.random.default_rng(7))[case]
        assert finite_difference_check(func, inputs) < OP_GRAD_TOLERANCE, name

    def test_non_finite_gradient(self):
        def func(x):
            return x, lambda g: (np.full_like(x, np.nan),)

        with pytest.raises(NumericError):
            finite_difference_check(func, [np.ones(3)])
