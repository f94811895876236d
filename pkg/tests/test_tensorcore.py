import pytest

import numpy as np

from representationflow.constants import SOBEL_X
from representationflow.exceptions import InvalidParameterException, NonFiniteException, ShapeMismatchException
from representationflow.tensorcore import (
    ElementwiseOp,
    FeatureMap,
    Kernel2D,
    NO_PADDING,
    PaddingMode,
    PaddingSpec,
    Precision,
    REPLICATE_1,
    ReduceOp,
    ReduceScope,
    channel_conv2d,
    channel_conv2d_backward,
    conv2d,
    correlate2d,
    correlate2d_backward,
    elementwise,
    ordered_sum,
    reduce,
)


def test_identity_kernel(rng):
    x = rng.normal(size=(6, 7))
    out = conv2d(FeatureMap(x), Kernel2D([[1.0]]))
    np.testing.assert_array_equal(out.plane(), x)


def test_sobel_of_constant_is_zero_inside():
    out = conv2d(FeatureMap(np.full((5, 5), 3.0)), Kernel2D(SOBEL_X), PaddingSpec.uniform(1))
    assert out.shape == (1, 5, 5)
    np.testing.assert_array_equal(out.plane()[1:-1, 1:-1], 0.0)


def test_forward_difference_first_column_padding():
    x = np.arange(1.0, 10.0).reshape(3, 3)
    out = conv2d(FeatureMap(x), Kernel2D([[-1.0, 1.0]]), PaddingSpec(mode=PaddingMode.ZERO, left=1))
    assert out.shape == (1, 3, 3)
    np.testing.assert_array_equal(out.plane()[0], [1.0, 1.0, 1.0])


def test_kernel_larger_than_input():
    with pytest.raises(ShapeMismatchException):
        conv2d(FeatureMap(np.zeros((2, 2))), Kernel2D(np.ones((3, 3))))


def test_conv_is_linear(rng):
    x, y = rng.normal(size=(2, 9, 9))
    kernel = rng.normal(size=(3, 3))
    left = correlate2d(2.5 * x - 0.75 * y, kernel, REPLICATE_1)
    right = 2.5 * correlate2d(x, kernel, REPLICATE_1) - 0.75 * correlate2d(y, kernel, REPLICATE_1)
    np.testing.assert_allclose(left, right, rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "padding, kernel_shape",
    [
        (NO_PADDING, (3, 3)),
        (REPLICATE_1, (2, 3)),
        (PaddingSpec(mode=PaddingMode.ZERO, left=1), (1, 2)),
        (PaddingSpec(mode=PaddingMode.ZERO, top=1), (2, 1)),
    ],
)
def test_correlate_backward_is_adjoint(rng, padding, kernel_shape):
    x = rng.normal(size=(2, 7, 8))
    kernel = rng.normal(size=kernel_shape)
    out = correlate2d(x, kernel, padding)
    upstream = rng.normal(size=out.shape)
    d_x, d_kernel = correlate2d_backward(upstream, x, kernel, padding)
    assert np.sum(out * upstream) == pytest.approx(np.sum(x * d_x), rel=1e-10)
    assert np.sum(out * upstream) == pytest.approx(np.sum(kernel * d_kernel), rel=1e-10)


def test_channel_conv_backward_is_adjoint(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    weight = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=4)
    out = channel_conv2d(x, weight, bias, REPLICATE_1)
    assert out.shape == (2, 4, 6, 6)
    upstream = rng.normal(size=out.shape)
    d_x, d_weight, d_bias = channel_conv2d_backward(upstream, x, weight, REPLICATE_1)
    linear = np.sum((out - bias[:, None, None]) * upstream)
    assert linear == pytest.approx(np.sum(x * d_x), rel=1e-10)
    assert linear == pytest.approx(np.sum(weight * d_weight), rel=1e-10)
    np.testing.assert_allclose(d_bias, upstream.sum(axis=(0, 2, 3)))


def test_channel_conv_rejects_channel_mismatch(rng):
    with pytest.raises(ShapeMismatchException):
        channel_conv2d(rng.normal(size=(2, 5, 5)), rng.normal(size=(1, 3, 1, 1)))


def test_elementwise():
    x = FeatureMap(np.array([[2.0, 4.0]]))
    np.testing.assert_array_equal(elementwise(ElementwiseOp.ADD, x, FeatureMap(np.zeros((1, 2)))).data, x.data)
    np.testing.assert_array_equal(elementwise(ElementwiseOp.SCALE, x, 1.0).data, x.data)
    np.testing.assert_array_equal(
        elementwise(ElementwiseOp.SUB, x, FeatureMap(np.array([[1.0, 1.0]]))).plane(), [[1.0, 3.0]]
    )
    np.testing.assert_array_equal(elementwise(ElementwiseOp.CLAMP, x, (0.0, 3.0)).plane(), [[2.0, 3.0]])


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeMismatchException):
        elementwise(ElementwiseOp.MUL, FeatureMap(np.zeros((2, 2))), FeatureMap(np.zeros((2, 3))))


def test_guarded_division_is_finite():
    out = elementwise(ElementwiseOp.DIV, FeatureMap(np.ones((2, 2))), FeatureMap(np.zeros((2, 2))))
    assert np.all(np.isfinite(out.data))


def test_reductions():
    assert reduce(ReduceOp.SUM, FeatureMap(np.zeros((3, 3)))) == 0.0
    assert reduce(ReduceOp.MEAN, FeatureMap(np.array([[1.0, 2.0, 3.0, 4.0]]))) == 2.5
    per_channel = reduce(ReduceOp.MAX, FeatureMap(np.array([[[-0.5, 0.5]], [[1.0, 2.0]]])), ReduceScope.CHANNEL)
    np.testing.assert_array_equal(per_channel, [0.5, 2.0])


def test_ordered_sum_matches_sequential_sum(rng):
    values = rng.normal(size=(4, 5))
    total = 0.0
    for value in values.ravel():
        total += value
    assert ordered_sum(values) == total


def test_feature_map_guards():
    with pytest.raises(NonFiniteException):
        FeatureMap(np.array([[np.nan]]))
    with pytest.raises(InvalidParameterException):
        FeatureMap(np.zeros((1, 0, 3)))
    with pytest.raises(ShapeMismatchException):
        FeatureMap(np.zeros(4))


def test_precision_is_kept():
    assert FeatureMap(np.zeros((2, 2), dtype=np.float32)).precision is Precision.STANDARD
    assert FeatureMap(np.zeros((2, 2), dtype=np.int64)).precision is Precision.WIDE
    assert FeatureMap.from_array([[1, 2]], Precision.STANDARD).data.dtype == np.float32


def test_feature_map_is_read_only():
    feature_map = FeatureMap(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        feature_map.data[0, 0, 0] = 1.0
