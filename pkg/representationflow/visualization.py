"""
Flow colour coding on the Middlebury colour wheel: hue encodes direction, saturation encodes magnitude, zero motion is
white.
"""

import typing as tp

import numpy as np

from functools import lru_cache
from logging import getLogger

from .tvl1 import FlowField

logger = getLogger(__name__)

# Hue steps between neighbouring primaries: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
WHEEL_STEPS = (15, 6, 4, 11, 13, 6)
MAGNITUDE_PERCENTILE = 99.0


@lru_cache(maxsize=1)
def color_wheel() -> np.ndarray:
    """
    :return: ``(55, 3)`` RGB wheel in ``[0, 1]``, read-only.

    """

    red_yellow, yellow_green, green_cyan, cyan_blue, blue_magenta, magenta_red = WHEEL_STEPS
    wheel = np.zeros((sum(WHEEL_STEPS), 3))
    start = 0

    def _segment(length: int, rising: int, falling: int, constant: int) -> None:
        nonlocal start
        ramp = np.arange(length) / length
        span = slice(start, start + length)
        if rising >= 0:
            wheel[span, rising] = ramp
        if falling >= 0:
            wheel[span, falling] = 1.0 - ramp
        wheel[span, constant] = 1.0
        start += length

    _segment(red_yellow, rising=1, falling=-1, constant=0)
    _segment(yellow_green, rising=-1, falling=0, constant=1)
    _segment(green_cyan, rising=2, falling=-1, constant=1)
    _segment(cyan_blue, rising=-1, falling=1, constant=2)
    _segment(blue_magenta, rising=0, falling=-1, constant=2)
    _segment(magenta_red, rising=-1, falling=2, constant=0)
    wheel.flags.writeable = False
    return wheel


def flow_to_color(flow: FlowField, max_magnitude: tp.Optional[float] = None) -> np.ndarray:
    """
    Render a flow field as an RGB image.

    :param flow: Flow field.
    :param max_magnitude: Magnitude mapped to full saturation; the 99th percentile of the magnitudes by default.

    :return: ``(H, W, 3)`` uint8 image.

    """

    u = flow.u_x.plane().astype(np.float64)
    v = flow.u_y.plane().astype(np.float64)
    magnitude = np.sqrt(u * u + v * v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(magnitude, MAGNITUDE_PERCENTILE))
    if max_magnitude <= 0:
        logger.debug("Zero flow, rendering white")
        return np.full(u.shape + (3,), 255, dtype=np.uint8)

    wheel = color_wheel()
    colors = wheel.shape[0]
    radius = magnitude / max_magnitude
    angle = np.arctan2(-v, -u) / np.pi
    position = (angle + 1.0) / 2.0 * (colors - 1)
    lower = np.floor(position).astype(int)
    upper = (lower + 1) % colors
    weight = (position - lower)[..., np.newaxis]
    color = (1.0 - weight) * wheel[lower] + weight * wheel[upper]

    inside = (radius <= 1.0)[..., np.newaxis]
    saturated = 1.0 - np.minimum(radius, 1.0)[..., np.newaxis] * (1.0 - color)
    color = np.where(inside, saturated, color * 0.75)
    return np.floor(255.0 * color + 0.5).clip(0, 255).astype(np.uint8)
