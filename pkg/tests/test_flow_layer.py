import pytest

import numpy as np

from representationflow.classes import FlowLayer, FlowParams, LayerWeights, LearnFlags, layer_checker, layer_forward
from representationflow.classes.flow_layer import normalize_255, normalize_backward, normalize_forward
from representationflow.exceptions import ShapeMismatchException, TapeMismatchException
from representationflow.repflow import rep_flow_forward
from representationflow.tensorcore import FeatureMap, REPLICATE_1, channel_conv2d
from representationflow.utils import smooth_texture


def _frames(channels: int, size: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(channels, size, size))
    return base, np.roll(base, 1, axis=-1) + rng.normal(0.0, 0.1, base.shape)


def test_normalize_endpoints():
    plane = np.linspace(-0.5, 0.5, 12).reshape(3, 4)
    normalized, _ = normalize_255(FeatureMap(plane))
    assert normalized.data.min() == 0.0
    assert normalized.data.max() == 255.0


def test_normalize_constant_plane():
    x = np.full((1, 4, 4), 2.0)
    y, tape = normalize_forward(x)
    np.testing.assert_array_equal(y, 0.0)
    np.testing.assert_array_equal(normalize_backward(tape, np.ones_like(x)), 0.0)


def test_normalize_is_near_idempotent_on_scaled_data():
    x = np.array([[[0.0, 127.5, 255.0]]])
    y, _ = normalize_forward(x)
    np.testing.assert_allclose(y, x, atol=1e-6)


def test_normalize_backward_matches_finite_differences(rng):
    x = rng.normal(size=(2, 4, 5))
    upstream = rng.normal(size=x.shape)
    _, tape = normalize_forward(x)
    analytic = normalize_backward(tape, upstream)
    step = 1e-6
    top = (0,) + tuple(np.unravel_index(np.argmax(x[0]), x[0].shape))
    bottom = (1,) + tuple(np.unravel_index(np.argmin(x[1]), x[1].shape))
    for index in [(0, 0, 0), (1, 2, 3), top, bottom]:
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        numeric = (np.sum(upstream * normalize_forward(plus)[0]) - np.sum(upstream * normalize_forward(minus)[0])) / (
            2.0 * step
        )
        assert analytic[index] == pytest.approx(numeric, rel=1e-5, abs=1e-5)


def test_normalize_backward_rejects_shape(rng):
    _, tape = normalize_forward(rng.normal(size=(1, 3, 3)))
    with pytest.raises(TapeMismatchException):
        normalize_backward(tape, np.zeros((1, 4, 4)))


def test_identical_frames_give_bias_response():
    weights = LayerWeights(3, 2, iterations=5, seed=1)
    frames = np.stack([smooth_texture(12, seed) for seed in range(3)])
    output, tape = FlowLayer(weights).forward(frames, frames)
    np.testing.assert_array_equal(tape.stack, 0.0)
    np.testing.assert_array_equal(output, 0.0)

    weights.expand_bias[:] = [1.0, -2.0, 0.5]
    output, _ = FlowLayer(weights).forward(frames, frames)
    np.testing.assert_array_equal(output[0], 1.0)
    np.testing.assert_array_equal(output[1], -2.0)


def test_shape_contract():
    frames_t, frames_t1 = _frames(4, 10)
    output, tape = FlowLayer(LayerWeights(4, 2, iterations=3)).forward(frames_t, frames_t1)
    assert tape.stack.shape == (4, 10, 10)
    assert output.shape == (4, 10, 10)


def test_matches_composition_of_public_operations():
    frames_t, frames_t1 = _frames(8, 12, seed=5)
    weights = LayerWeights(8, 4, iterations=10, seed=2)
    weights.expand_bias[:] = np.linspace(-1.0, 1.0, 8)
    output = layer_forward(FeatureMap(frames_t), FeatureMap(frames_t1), weights)

    reduce = weights.reduce[:, :, np.newaxis, np.newaxis]
    reduced_t, _ = normalize_255(FeatureMap(channel_conv2d(frames_t, reduce)))
    reduced_t1, _ = normalize_255(FeatureMap(channel_conv2d(frames_t1, reduce)))
    planes = []
    for channel in range(4):
        flow, _ = rep_flow_forward(
            reduced_t.channel(channel), reduced_t1.channel(channel), weights.flow_params, weights.iterations
        )
        planes += [flow.u_x.plane(), flow.u_y.plane()]
    expected = channel_conv2d(np.stack(planes), weights.expand, weights.expand_bias, REPLICATE_1)
    np.testing.assert_allclose(output.data, expected, rtol=1e-10, atol=1e-10)


def test_thread_count_does_not_change_values():
    frames_t, frames_t1 = _frames(2, 8, seed=3)
    frames_t = np.stack([frames_t, frames_t[::-1]])
    frames_t1 = np.stack([frames_t1, frames_t1[::-1]])
    weights = LayerWeights(2, 3, iterations=4)
    single, _ = FlowLayer(weights, threads=1).forward(frames_t, frames_t1)
    pooled, _ = FlowLayer(weights, threads=3).forward(frames_t, frames_t1)
    np.testing.assert_allclose(single, pooled, rtol=1e-12, atol=1e-12)


def test_channel_mismatch_is_rejected():
    frames_t, frames_t1 = _frames(3, 8)
    with pytest.raises(ShapeMismatchException):
        FlowLayer(LayerWeights(2, 2)).forward(frames_t, frames_t1)


def test_zero_upstream_gives_zero_gradients():
    frames_t, frames_t1 = _frames(2, 8)
    layer = FlowLayer(LayerWeights(2, 2, iterations=3))
    _, tape = layer.forward(frames_t, frames_t1)
    bundle = layer.backward(tape, np.zeros_like(frames_t))
    for name, value in bundle.leaves().items():
        assert np.all(np.asarray(value) == 0.0), name


def test_parameter_names_and_scales():
    weights = LayerWeights(3, 2, flow_params=FlowParams(learn_flags=LearnFlags.preset("scalars"), lr_scale=0.1))
    names = set(weights.named_parameters())
    assert {"reduce", "expand", "expand_bias", "flow.log_tau", "flow.w_x", "flow.sobel_y"} <= names
    assert weights.learning_scales()["flow.log_theta"] == 0.1
    assert weights.learning_scales()["expand"] == 1.0
    assert weights.frozen_names() == {"flow.w_x", "flow.w_y", "flow.sobel_x", "flow.sobel_y"}


@pytest.mark.parametrize("iterations", [1, 3])
def test_layer_gradients(iterations):
    layer_checker(iterations).check()
