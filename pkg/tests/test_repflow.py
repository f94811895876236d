import pytest

import numpy as np

from representationflow.classes import FlowParams, LearnFlags
from representationflow.exceptions import InvalidParameterException, TapeMismatchException
from representationflow.repflow import (
    GradientBundle,
    flow_kernels,
    rep_flow_backward,
    rep_flow_forward,
    unroll_backward,
    unroll_forward,
)
from representationflow.tensorcore import FeatureMap, Precision
from representationflow.tvl1 import FlowField, TvParams, endpoint_error, tvl1_flow
from representationflow.utils import shift_pair


def _random_pair(seed: int, size: int = 16):
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.0, 255.0, (size, size))
    moved = np.roll(base, tuple(rng.integers(-2, 3, size=2)), axis=(0, 1)) + rng.normal(0.0, 5.0, (size, size))
    return FeatureMap(base), FeatureMap(moved)


@pytest.mark.parametrize("iterations", [1, 5, 10, 20, 50, 100])
def test_matches_reference_solver(iterations):
    params = FlowParams(learn_flags=LearnFlags.preset("none"))
    for seed in range(50):
        f1, f2 = _random_pair(seed)
        flow, _ = rep_flow_forward(f1, f2, params, iterations)
        reference = tvl1_flow(f1, f2, TvParams(), iterations)
        np.testing.assert_allclose(flow.stack(), reference.stack(), rtol=1e-10, atol=1e-10)


def test_zero_motion_is_exact_for_any_parameters():
    rng = np.random.default_rng(7)
    frame = FeatureMap(rng.uniform(0.0, 255.0, (10, 10)))
    for _ in range(100):
        tau, lam, theta = rng.uniform(0.01, 1.0, size=3)
        params = FlowParams(tau, lam, theta, w_x=rng.normal(size=(1, 2)), w_y=rng.normal(size=(2, 1)))
        flow, tape = rep_flow_forward(frame, frame, params, 5)
        np.testing.assert_array_equal(flow.stack(), 0.0)
        for low, high in tape.masks:
            assert not low.any() and not high.any()


def test_more_iterations_approach_the_converged_solution(shifted_pair):
    f1, f2 = shifted_pair
    params = FlowParams()
    converged = tvl1_flow(f1, f2, TvParams(), 100)
    early, _ = rep_flow_forward(f1, f2, params, 10)
    late, _ = rep_flow_forward(f1, f2, params, 100)
    assert endpoint_error(early, converged) > endpoint_error(late, converged)


def test_corpus_error_shrinks_with_iterations(shift_corpus):
    params = FlowParams()
    references = [tvl1_flow(f1, f2, TvParams(), 100) for f1, f2 in shift_corpus]
    errors = []
    for iterations in (1, 5, 10, 20, 50):
        flows = [rep_flow_forward(f1, f2, params, iterations)[0] for f1, f2 in shift_corpus]
        errors.append(np.mean([endpoint_error(flow, reference) for flow, reference in zip(flows, references)]))
    assert all(later <= earlier for earlier, later in zip(errors, errors[1:])), errors


def test_zero_time_step_keeps_dual_at_zero(shifted_pair):
    f1, f2 = shifted_pair
    kernels = flow_kernels(FlowParams())
    u_x, u_y, tape = unroll_forward(f1.plane(), f2.plane(), 0.0, 0.15, 0.3, kernels, 1)
    state = tape.states[1]
    for dual in (state.p_xx, state.p_xy, state.p_yx, state.p_yy):
        np.testing.assert_array_equal(dual, 0.0)
    reference_x, reference_y, _ = unroll_forward(f1.plane(), f2.plane(), 0.25, 0.15, 0.3, kernels, 1)
    np.testing.assert_array_equal(u_x, reference_x)
    np.testing.assert_array_equal(u_y, reference_y)


def test_zero_upstream_gives_zero_gradients(shifted_pair):
    f1, f2 = shifted_pair
    _, tape = rep_flow_forward(f1, f2, FlowParams(), 5)
    zeros = np.zeros((32, 32))
    bundle = unroll_backward(tape, zeros, zeros)
    for name, value in bundle.leaves().items():
        assert np.all(np.asarray(value) == 0.0), name


def test_backward_shapes(shifted_pair):
    f1, f2 = shifted_pair
    _, tape = rep_flow_forward(f1, f2, FlowParams(), 3)
    upstream = FlowField.from_arrays(np.ones((32, 32)), np.zeros((32, 32)))
    bundle = rep_flow_backward(tape, upstream)
    assert isinstance(bundle, GradientBundle)
    assert bundle.d_f1.shape == bundle.d_f2.shape == (1, 32, 32)
    assert bundle.d_wx.shape == (1, 2)
    assert bundle.d_wy.shape == (2, 1)
    assert bundle.d_sobel_x.shape == bundle.d_sobel_y.shape == (3, 3)


def test_backward_rejects_mismatched_upstream(shifted_pair):
    f1, f2 = shifted_pair
    _, tape = rep_flow_forward(f1, f2, FlowParams(), 2)
    with pytest.raises(TapeMismatchException):
        rep_flow_backward(tape, FlowField.from_arrays(np.zeros((8, 8)), np.zeros((8, 8))))


def test_directional_derivative_of_theta(shifted_pair):
    f1, f2 = shifted_pair
    kernels = flow_kernels(FlowParams())
    rng = np.random.default_rng(0)
    c_x, c_y = rng.normal(size=(2, 32, 32))

    def loss(theta: float) -> float:
        u_x, u_y, _ = unroll_forward(f1.plane(), f2.plane(), 0.25, 0.15, theta, kernels, 4)
        return float(np.sum(c_x * u_x + c_y * u_y))

    _, _, tape = unroll_forward(f1.plane(), f2.plane(), 0.25, 0.15, 0.3, kernels, 4)
    analytic = unroll_backward(tape, c_x, c_y).d_theta
    step = 1e-6
    numeric = (loss(0.3 + step) - loss(0.3 - step)) / (2.0 * step)
    assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0) < 1e-4


def test_standard_precision_stays_float32(shifted_pair_standard):
    f1, f2 = shifted_pair_standard
    flow, _ = rep_flow_forward(f1, f2, FlowParams(), 5)
    assert flow.u_x.data.dtype == np.float32
    assert flow.u_x.precision is Precision.STANDARD


def test_rejects_bad_arguments(shifted_pair):
    f1, f2 = shifted_pair
    with pytest.raises(InvalidParameterException):
        rep_flow_forward(f1, f2, FlowParams(), 0)
    with pytest.raises(InvalidParameterException):
        rep_flow_forward(f1, FeatureMap(f2.data.astype(np.float32)), FlowParams(), 2)
    with pytest.raises(InvalidParameterException):
        FlowParams(theta=-1.0)


def test_shift_pair_fixture_is_a_circular_shift():
    f1, f2 = shift_pair(16, (1, 0))
    np.testing.assert_array_equal(f2.plane(), np.roll(f1.plane(), 1, axis=0))
