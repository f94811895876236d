import typing as tp

import numpy as np

from dataclasses import dataclass, field
from logging import getLogger

from .base import BaseClass
from ..constants import MOMENTUM
from ..exceptions import InvalidParameterException, NonFiniteException, ShapeMismatchException
from ..types import ArrayDict

logger = getLogger(__name__)


@dataclass
class MomentumState:
    """
    Velocity per parameter name. Missing entries start at zero.

    """

    momentum: float = MOMENTUM
    velocities: ArrayDict = field(default_factory=dict)


def step_parameters(
    component: BaseClass, grads: ArrayDict, lr: float, momentum_state: MomentumState
) -> BaseClass:
    """
    One SGD-with-momentum step: ``v <- momentum * v + g``, ``param <- param - lr * scale * v``. ``scale`` is the
    component's per-parameter learning-rate multiplier. Frozen parameters and their velocities are left untouched. All
    gradients are validated before any parameter or velocity changes.

    :param component: Parameter owner, updated in place.
    :param grads: Gradient per parameter name, shaped like the parameter.
    :param lr: Base learning rate, non-negative.
    :param momentum_state: Velocity state, updated in place.

    :return: The updated component.

    """

    if lr < 0 or not np.isfinite(lr):
        raise InvalidParameterException(f"Learning rate must be a non-negative number, got {lr}")

    parameters = component.named_parameters()
    scales = component.learning_scales()
    frozen = component.frozen_names()

    checked: ArrayDict = {}
    for name, parameter in parameters.items():
        if name in frozen:
            continue
        if name not in grads:
            raise ShapeMismatchException(f"No gradient for parameter {name}")
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != parameter.shape:
            raise ShapeMismatchException(f"Gradient for {name} has shape {grad.shape}, expected {parameter.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteException(f"Non-finite gradient for parameter {name}")
        checked[name] = grad

    # Nothing is touched until every gradient passed.
    for name, grad in checked.items():
        velocity = momentum_state.momentum * momentum_state.velocities.get(name, np.zeros_like(grad)) + grad
        momentum_state.velocities[name] = velocity
        parameters[name] -= lr * scales[name] * velocity

    return component


class MomentumSGD:
    """
    Stochastic gradient descent with momentum over every parameter of one component.
    """

    def __init__(self, component: BaseClass, lr: float, momentum: float = MOMENTUM) -> None:
        """
        :param component: Parameter owner.
        :param lr: Base learning rate.
        :param momentum: Velocity decay.

        """

        if not 0 <= momentum < 1:
            raise InvalidParameterException(f"momentum must be in [0, 1), got {momentum}")
        self.component: BaseClass = component
        self.lr: float = lr
        self.state: MomentumState = MomentumState(momentum=momentum)

    def step(self, grads: ArrayDict) -> None:
        step_parameters(self.component, grads, self.lr, self.state)

    def velocity(self, name: str) -> tp.Optional[np.ndarray]:
        return self.state.velocities.get(name)
