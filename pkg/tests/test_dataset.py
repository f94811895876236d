import pytest

import numpy as np

from representationflow.dataset import CLASS_NAMES, ToyDatasetConfig, gen_motion_dataset, stack_batch
from representationflow.exceptions import ConfigException, InvalidParameterException


def test_class_balance():
    train, test = gen_motion_dataset(ToyDatasetConfig(samples_per_class=2, test_samples_per_class=1), seed=0)
    assert len(train) == 8
    assert len(test) == 4
    assert np.bincount([sample.label for sample in train]).tolist() == [2, 2, 2, 2]


def test_same_seed_same_bits():
    config = ToyDatasetConfig(samples_per_class=2, test_samples_per_class=1, size=12)
    first, _ = gen_motion_dataset(config, seed=3)
    second, _ = gen_motion_dataset(config, seed=3)
    other, _ = gen_motion_dataset(config, seed=4)
    for a, b in zip(first, second):
        assert a.frames.tobytes() == b.frames.tobytes()
    assert first[0].frames.tobytes() != other[0].frames.tobytes()


def test_splits_use_independent_streams():
    train, test = gen_motion_dataset(ToyDatasetConfig(samples_per_class=1, test_samples_per_class=1, size=12), 0)
    assert not np.array_equal(train[0].frames, test[0].frames)


def test_rightward_motion_is_a_circular_shift():
    config = ToyDatasetConfig(samples_per_class=1, frames=2, speed_min=1, speed_max=1, size=16)
    train, _ = gen_motion_dataset(config, seed=0)
    sample = next(sample for sample in train if CLASS_NAMES[sample.label] == "right")
    np.testing.assert_array_equal(sample.frames[1], np.roll(sample.frames[0], 1, axis=-1))


@pytest.mark.parametrize("label, shift, axis", [(0, -1, -2), (1, 1, -2), (2, -1, -1)])
def test_other_directions(label, shift, axis):
    config = ToyDatasetConfig(samples_per_class=1, frames=3, speed_min=1, speed_max=1, size=10)
    train, _ = gen_motion_dataset(config, seed=1)
    frames = train[label].frames
    np.testing.assert_array_equal(frames[2], np.roll(frames[1], shift, axis=axis))


def test_shuffled_frames_keep_content():
    plain = ToyDatasetConfig(samples_per_class=1, size=12)
    shuffled = ToyDatasetConfig(samples_per_class=1, size=12, shuffle_frames=True)
    sample = gen_motion_dataset(shuffled, seed=2)[0][0]
    reference = gen_motion_dataset(plain, seed=2)[0][0]
    assert sample.length == reference.length == 8
    assert {frame.tobytes() for frame in sample.frames} == {frame.tobytes() for frame in reference.frames}


def test_distractor_stays_in_range():
    train, _ = gen_motion_dataset(ToyDatasetConfig(samples_per_class=1, size=12, channels=3, distractor=True), 0)
    frames = train[0].frames
    assert frames.shape == (8, 3, 12, 12)
    assert 0.0 <= frames.min() and frames.max() <= 1.0


def test_stack_batch():
    train, _ = gen_motion_dataset(ToyDatasetConfig(samples_per_class=1, size=8, frames=2), 0)
    frames, labels = stack_batch(train)
    assert frames.shape == (4, 2, 1, 8, 8)
    assert labels.tolist() == [0, 1, 2, 3]


def test_invalid_configs():
    with pytest.raises(InvalidParameterException):
        ToyDatasetConfig(size=7)
    with pytest.raises(ConfigException):
        ToyDatasetConfig(num_classes=5)
    with pytest.raises(ConfigException):
        ToyDatasetConfig(frames=1)
    with pytest.raises(ConfigException):
        ToyDatasetConfig(speed_min=3, speed_max=2)
