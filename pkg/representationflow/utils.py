import logging
import typing as tp

import numpy as np

from .constants import NORMALIZED_MAX, REC601_LUMA
from .tensorcore import FeatureMap, Precision
from .tvl1 import interior

logger = logging.getLogger(__name__)


def luma(image: np.ndarray) -> np.ndarray:
    """
    Rec. 601 luma of an ``(H, W, 3)`` colour image.

    :param image: RGB image, any real dtype.

    :return: ``(H, W)`` float64 greyscale image.

    """

    return np.tensordot(np.asarray(image, dtype=np.float64), np.asarray(REC601_LUMA), axes=([-1], [0]))


def relative_error(analytic: tp.Any, numeric: tp.Any) -> np.ndarray:
    """
    Element-wise ``|a - f| / max(|a|, |f|, 1)``.

    :param analytic: Reverse-mode values.
    :param numeric: Finite-difference values.

    :return: Relative errors.

    """

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / scale


def interior_mean(array: np.ndarray, border: int) -> float:
    """
    Mean over the last two axes with ``border`` pixels dropped on every side.

    """

    return float(np.mean(interior(array, border)))


def smooth_texture(size: int, seed: int = 0, components: int = 6, max_frequency: int = 3) -> np.ndarray:
    """
    Periodic smooth test image in ``[0, 255]`` built from random sinusoids with integer frequencies.

    :param size: Side length.
    :param seed: Random seed.
    :param components: Number of sinusoids.
    :param max_frequency: Largest absolute frequency in cycles per image.

    :return: ``(size, size)`` float64 image.

    """

    rng = np.random.default_rng(seed)
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    image = np.zeros((size, size))
    for _ in range(components):
        k_y, k_x = rng.integers(-max_frequency, max_frequency + 1, size=2)
        if k_y == 0 and k_x == 0:
            k_x = 1
        phase = rng.uniform(0.0, 2.0 * np.pi)
        image += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * (k_y * rows + k_x * cols) / size + phase)
    return NORMALIZED_MAX * (image - image.min()) / (image.max() - image.min())


def shift_pair(
    size: int, shift: tp.Tuple[int, int] = (0, 1), seed: int = 0, precision: Precision = Precision.WIDE
) -> tp.Tuple[FeatureMap, FeatureMap]:
    """
    A smooth texture and its circular shift by ``(dy, dx)`` pixels.

    :param size: Side length.
    :param shift: ``(dy, dx)`` displacement of the second frame.
    :param seed: Texture seed.
    :param precision: Precision of the returned maps.

    :return: ``(F1, F2)``.

    """

    first = smooth_texture(size, seed)
    second = np.roll(first, shift, axis=(0, 1))
    return FeatureMap.from_array(first, precision), FeatureMap.from_array(second, precision)
