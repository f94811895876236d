import pytest

import numpy as np

from representationflow.classes import FlowMode, GradientChecker, LearnFlags, TinyModel, cross_entropy
from representationflow.dataset import ToyDatasetConfig, gen_motion_dataset, stack_batch
from representationflow.exceptions import InvalidParameterException, ShapeMismatchException


def _batch(frames: int = 3, size: int = 8, channels: int = 1):
    config = ToyDatasetConfig(samples_per_class=1, frames=frames, size=size, channels=channels)
    return stack_batch(gen_motion_dataset(config, seed=0)[0])


@pytest.mark.parametrize("mode", list(FlowMode))
def test_probabilities_are_normalized(mode):
    frames, _ = _batch()
    probabilities = TinyModel(c_prime=2, iterations=2, mode=mode).predict(frames)
    assert probabilities.shape == (4, 4)
    assert np.all(probabilities >= 0.0)
    np.testing.assert_allclose(probabilities.sum(axis=-1), 1.0, atol=1e-6)


def test_prediction_is_deterministic():
    frames, _ = _batch()
    model = TinyModel(c_prime=2, iterations=2)
    np.testing.assert_array_equal(model.predict(frames), model.predict(frames))


def test_cross_entropy():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    assert cross_entropy(np.full(4, 0.25), 2) == pytest.approx(np.log(4.0))
    assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(-np.log(1e-12))
    with pytest.raises(InvalidParameterException):
        cross_entropy(np.full(4, 0.25), 4)


def test_rejects_bad_frames():
    model = TinyModel(c_prime=2, iterations=1, mode=FlowMode.FCF)
    with pytest.raises(ShapeMismatchException):
        model.predict(np.zeros((1, 2, 1, 8, 8)))
    with pytest.raises(ShapeMismatchException):
        model.predict(np.zeros((1, 3, 2, 8, 8)))


def test_parameter_layout():
    model = TinyModel(c_prime=2, iterations=1, learn_flags=LearnFlags.preset("divergence"))
    names = list(model.named_parameters())
    assert names[0] == "stage_a.weight"
    assert "flow.flow.w_x" in names
    assert "flow.flow.log_tau" in model.frozen_names()
    assert model.learning_scales()["flow.flow.w_x"] == pytest.approx(0.01)
    assert not TinyModel(mode=FlowMode.IDENTITY).frozen_names()


@pytest.mark.parametrize("mode", [FlowMode.FLOW, FlowMode.FOF])
def test_loss_gradients(mode):
    frames, labels = _batch(frames=3, size=8)
    model = TinyModel(c_prime=2, iterations=2, mode=mode, seed=3)
    parameters = model.named_parameters()
    leaves = {name: parameters[name] for name in parameters if "log_" in name or name.startswith("classifier")}
    leaves["stage_a.bias"] = parameters["stage_a.bias"]

    def objective():
        return model.loss_and_gradients(frames, labels)

    GradientChecker(objective, leaves, max_entries=6).check()
