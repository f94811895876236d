import pytest

import numpy as np

from representationflow.classes import FlowConvFlow, LayerWeights, check_flow_stages, fcf_checker, flow_conv_flow, fof
from representationflow.exceptions import ConfigException, InvalidParameterException, ShapeMismatchException
from representationflow.tensorcore import FeatureMap
from representationflow.utils import interior_mean, smooth_texture


def _sequence(size: int = 24, seed: int = 0):
    base = smooth_texture(size, seed)[np.newaxis] / 255.0
    return [np.roll(base, step, axis=-1) for step in range(3)]


def _positive_reduce(stack: FlowConvFlow) -> FlowConvFlow:
    for weights in (stack.weights_a, stack.weights_b):
        weights.reduce[...] = 1.0
    return stack


def test_identical_frames_give_stage_b_zero_response():
    frame = _sequence()[0]
    stack = FlowConvFlow.create(1, 1, iterations=5, seed=4)
    output, tape = stack.forward(frame, frame, frame)
    np.testing.assert_array_equal(tape.tape_a1.stack, 0.0)
    np.testing.assert_array_equal(tape.tape_b.stack, 0.0)
    np.testing.assert_array_equal(output, 0.0)


def test_constant_velocity_gives_matching_first_stage_flows():
    ft, ft1, ft2 = _sequence()
    stack = _positive_reduce(FlowConvFlow.create(1, 1, iterations=50, seed=2))
    _, tape = stack.forward(ft, ft1, ft2)
    first = interior_mean(tape.tape_a1.stack[0], 3)
    second = interior_mean(tape.tape_a2.stack[0], 3)
    assert first > 0.3
    assert abs(first - second) <= 0.1 * abs(first)


def test_constant_velocity_gives_small_second_stage_flow():
    base = smooth_texture(24, seed=0, max_frequency=1)[np.newaxis] / 255.0
    ft, ft1, ft2 = (np.roll(base, step, axis=-1) for step in range(3))
    stack = _positive_reduce(
        FlowConvFlow(LayerWeights(1, 1, iterations=50, seed=2), LayerWeights(1, 1, iterations=10, seed=3))
    )
    _, tape = stack.forward(ft, ft1, ft2)
    assert interior_mean(tape.tape_a1.stack[0], 3) > 0.3
    mean_x = interior_mean(tape.tape_b.stack[0], 3)
    mean_y = interior_mean(tape.tape_b.stack[1], 3)
    assert np.hypot(mean_x, mean_y) < 0.2


def test_uniform_first_stage_response_gives_zero_second_stage_flow():
    ft, ft1, ft2 = _sequence()
    stack = _positive_reduce(FlowConvFlow.create(1, 1, iterations=10, seed=2))
    stack.weights_a.expand[...] = 0.0
    stack.weights_a.expand_bias[...] = 0.7
    output, tape = stack.forward(ft, ft1, ft2)
    np.testing.assert_array_equal(tape.tape_b.stack, 0.0)
    np.testing.assert_array_equal(output, 0.0)


def test_feature_map_wrappers_keep_shape():
    frames = [FeatureMap(frame) for frame in _sequence(12)]
    stack = FlowConvFlow.create(1, 2, iterations=3, seed=1)
    out = flow_conv_flow(*frames, stack.weights_a, stack.mid, stack.weights_b)
    assert out.shape == frames[0].shape
    assert fof(*frames, stack.weights_a, stack.weights_b).shape == frames[0].shape


def test_parameter_names():
    with_mid = FlowConvFlow.create(2, 2, iterations=2)
    without_mid = FlowConvFlow.create(2, 2, iterations=2, with_mid=False)
    assert {"a.reduce", "mid.weight", "mid.bias", "b.flow.log_theta"} <= set(with_mid.named_parameters())
    assert not any(name.startswith("mid.") for name in without_mid.named_parameters())
    assert "a.flow.sobel_x" in with_mid.frozen_names()


def test_invalid_stacks():
    with pytest.raises(ShapeMismatchException):
        FlowConvFlow(LayerWeights(2, 2), LayerWeights(3, 2))
    with pytest.raises(ShapeMismatchException):
        FlowConvFlow(LayerWeights(2, 2), LayerWeights(2, 2), mid=np.zeros((2, 2, 1, 1)))
    with pytest.raises(InvalidParameterException):
        FlowConvFlow(LayerWeights(2, 2), LayerWeights(2, 2), mid_bias=np.zeros(2))
    stack = FlowConvFlow.create(1, 1, iterations=1)
    with pytest.raises(ShapeMismatchException):
        stack.forward(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), np.zeros((1, 9, 9)))


def test_stage_count_guard():
    check_flow_stages(1)
    check_flow_stages(2)
    with pytest.raises(ConfigException):
        check_flow_stages(3)
    with pytest.raises(ConfigException):
        check_flow_stages(0)


@pytest.mark.parametrize("with_mid", [True, False])
def test_gradients(with_mid):
    fcf_checker(2, with_mid=with_mid).check()
