"""
Synthetic motion-classification videos. Every sample is a random periodic texture translating in one of up to four
directions; the texture distribution does not depend on the class, so a single frame carries no label information.
"""

import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .exceptions import ConfigException, InvalidParameterException, ShapeMismatchException
from .tensorcore import FeatureMap

logger = getLogger(__name__)

# (dy, dx) per class, in class-index order.
DIRECTIONS: tp.Dict[str, tp.Tuple[int, int]] = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
CLASS_NAMES: tp.Tuple[str, ...] = tuple(DIRECTIONS)

MIN_SIZE = 8


@dataclass(frozen=True)
class ToyDatasetConfig:
    """
    Shape and content of the synthetic dataset.

    """

    num_classes: int = 4
    samples_per_class: int = 16
    test_samples_per_class: int = 8
    frames: int = 8
    size: int = 32
    channels: int = 1
    speed_min: int = 1
    speed_max: int = 2
    sinusoids: int = 4
    max_frequency: int = 3
    distractor: bool = False
    shuffle_frames: bool = False

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(DIRECTIONS):
            raise ConfigException(f"num_classes must be in [2, {len(DIRECTIONS)}], got {self.num_classes}")
        if self.size < MIN_SIZE:
            raise InvalidParameterException(f"Spatial size must be at least {MIN_SIZE}, got {self.size}")
        if self.speed_min < 1 or self.speed_max < self.speed_min:
            raise ConfigException(f"Invalid speed range [{self.speed_min}, {self.speed_max}]")
        if self.frames < 2 or self.channels < 1 or self.samples_per_class < 0 or self.test_samples_per_class < 0:
            raise ConfigException("frames must be >= 2, channels >= 1 and sample counts non-negative")
        if self.sinusoids < 1 or self.max_frequency < 1:
            raise ConfigException("Texture needs at least one sinusoid and a positive frequency bound")


@dataclass
class VideoSample:
    """
    ``frames`` has shape ``(T, C, H, W)``.

    """

    frames: np.ndarray
    label: int

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ShapeMismatchException(f"Frames must be (T, C, H, W), got shape {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def frame(self, index: int) -> FeatureMap:
        return FeatureMap(self.frames[index])


def texture(rng: np.random.Generator, size: int, channels: int, sinusoids: int, max_frequency: int) -> np.ndarray:
    """
    Band-limited periodic texture: a sum of sinusoids with integer frequencies, so it tiles the torus exactly.

    :param rng: Random generator.
    :param size: Side length.
    :param channels: Channel count; channels mix the same sinusoids with different weights.
    :param sinusoids: Number of sinusoid components.
    :param max_frequency: Largest absolute frequency in cycles per image.

    :return: ``(C, size, size)`` array scaled to ``[0, 1]``.

    """

    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    components = []
    for _ in range(sinusoids):
        k_y, k_x = 0, 0
        while k_y == 0 or k_x == 0:
            k_y, k_x = rng.integers(-max_frequency, max_frequency + 1, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        components.append(np.sin(2.0 * np.pi * (k_y * rows + k_x * cols) / size + phase))
    weights = rng.uniform(0.5, 1.0, size=(channels, sinusoids))
    image = np.einsum("ck,khw->chw", weights, np.stack(components))
    low = image.min(axis=(-2, -1), keepdims=True)
    high = image.max(axis=(-2, -1), keepdims=True)
    return (image - low) / (high - low)


def make_sample(config: ToyDatasetConfig, rng: np.random.Generator, label: int) -> VideoSample:
    """
    One translating-texture video of class ``label``.

    :param config: Dataset configuration.
    :param rng: Random generator owned by the split.
    :param label: Class index.

    :return: VideoSample.

    """

    base = texture(rng, config.size, config.channels, config.sinusoids, config.max_frequency)
    speed = int(rng.integers(config.speed_min, config.speed_max + 1))
    d_y, d_x = DIRECTIONS[CLASS_NAMES[label]]
    frames = np.stack(
        [np.roll(base, (d_y * speed * t, d_x * speed * t), axis=(-2, -1)) for t in range(config.frames)]
    )
    if config.distractor:
        overlay = texture(rng, config.size, config.channels, config.sinusoids, config.max_frequency)
        frames = (frames + 0.5 * overlay[np.newaxis]) / 1.5
    if config.shuffle_frames:
        frames = frames[rng.permutation(config.frames)]
    return VideoSample(frames=frames, label=label)


def _split(config: ToyDatasetConfig, seed_sequence: np.random.SeedSequence, per_class: int) -> tp.List[VideoSample]:
    rng = np.random.default_rng(seed_sequence)
    return [make_sample(config, rng, index % config.num_classes) for index in range(per_class * config.num_classes)]


def gen_motion_dataset(
    config: ToyDatasetConfig, seed: int = 0
) -> tp.Tuple[tp.List[VideoSample], tp.List[VideoSample]]:
    """
    Generate the train and test splits. Both are class-balanced with labels cycling through the classes; the two
    splits draw from independent child seeds so they never share a texture stream.

    :param config: Dataset configuration.
    :param seed: Root seed.

    :return: ``(train, test)`` lists of samples.

    """

    train_seed, test_seed = np.random.SeedSequence(seed).spawn(2)
    train = _split(config, train_seed, config.samples_per_class)
    test = _split(config, test_seed, config.test_samples_per_class)
    logger.info(
        f"Generated {len(train)} train and {len(test)} test videos of {config.frames}x{config.channels}x"
        f"{config.size}x{config.size}, {config.num_classes} classes"
    )
    return train, test


def stack_batch(samples: tp.Sequence[VideoSample]) -> tp.Tuple[np.ndarray, np.ndarray]:
    """
    :return: ``(N, T, C, H, W)`` frames and ``(N,)`` labels.

    """

    return np.stack([sample.frames for sample in samples]), np.array([sample.label for sample in samples])
