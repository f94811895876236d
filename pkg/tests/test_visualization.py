import numpy as np

from representationflow.tvl1 import FlowField
from representationflow.visualization import WHEEL_STEPS, color_wheel, flow_to_color


def test_wheel():
    wheel = color_wheel()
    assert wheel.shape == (sum(WHEEL_STEPS), 3)
    np.testing.assert_array_equal(wheel[0], [1.0, 0.0, 0.0])
    assert wheel.min() >= 0.0 and wheel.max() <= 1.0


def test_zero_flow_is_white():
    image = flow_to_color(FlowField.from_arrays(np.zeros((4, 5)), np.zeros((4, 5))))
    assert image.shape == (4, 5, 3)
    assert image.dtype == np.uint8
    np.testing.assert_array_equal(image, 255)


def test_opposite_directions_get_different_hues():
    u = np.zeros((2, 4))
    u[0] = 1.0
    u[1] = -1.0
    image = flow_to_color(FlowField.from_arrays(u, np.zeros((2, 4))))
    assert not np.array_equal(image[0, 0], image[1, 0])
    np.testing.assert_array_equal(image[0], np.broadcast_to(image[0, 0], (4, 3)))


def test_saturation_grows_with_magnitude():
    u = np.array([[0.25, 1.0]])
    image = flow_to_color(FlowField.from_arrays(u, np.zeros_like(u)), max_magnitude=1.0).astype(int)
    assert image[0, 0].min() > image[0, 1].min()
