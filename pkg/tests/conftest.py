import pytest

import numpy as np

from representationflow.tensorcore import FeatureMap, Precision
from representationflow.utils import shift_pair, smooth_texture


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def shifted_pair():
    return shift_pair(32, (0, 1), seed=0)


@pytest.fixture
def shifted_pair_standard():
    return shift_pair(32, (0, 1), seed=0, precision=Precision.STANDARD)


@pytest.fixture
def texture_map() -> FeatureMap:
    return FeatureMap(smooth_texture(16, seed=3))


@pytest.fixture(scope="module")
def shift_corpus():
    return [shift_pair(32, (0, 1), seed=seed) for seed in range(20)]
