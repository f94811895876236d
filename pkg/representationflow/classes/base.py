import typing as tp

import numpy as np

from logging import getLogger

from ..exceptions import ShapeMismatchException
from ..types import ArrayDict, ScaleDict

logger = getLogger(__name__)


class BaseClass:
    """
    Base class for components owning learnable tensors. Parameters are exposed by name as mutable arrays (scalars as
    0-d arrays) so the optimizer can update them in place.
    """

    def named_parameters(self) -> ArrayDict:
        """
        Stored learnable tensors keyed by a dotted name. Arrays are returned by reference.

        :return: Name to array mapping.

        """

        raise NotImplementedError

    def learning_scales(self) -> ScaleDict:
        """
        Multiplier applied to the base learning rate per parameter.

        :return: Name to scale mapping. Defaults to 1 for every parameter.

        """

        return {name: 1.0 for name in self.named_parameters()}

    def frozen_names(self) -> tp.Set[str]:
        """
        Parameters the optimizer must leave untouched.

        :return: Set of names. Empty by default.

        """

        return set()

    def state_dict(self) -> ArrayDict:
        """
        Copies of all stored tensors, suitable for checkpointing.

        :return: Name to array copy mapping.

        """

        return {name: np.array(value, copy=True) for name, value in self.named_parameters().items()}

    def load_state_dict(self, state: ArrayDict) -> None:
        """
        Overwrite stored tensors in place. Every name must be known and keep its shape.

        :param state: Name to array mapping, e.g. from :meth:`state_dict` or a checkpoint.

        """

        parameters: ArrayDict = self.named_parameters()
        unknown = set(state) - set(parameters)
        if unknown:
            raise ShapeMismatchException(f"Unknown parameters in state: {sorted(unknown)}")
        for name, value in state.items():
            target = parameters[name]
            value = np.asarray(value, dtype=target.dtype)
            if value.shape != target.shape:
                raise ShapeMismatchException(f"Parameter {name} has shape {target.shape}, got {value.shape}")
            target[...] = value
        logger.info(f"Loaded {len(state)} tensors into {type(self).__name__}")

    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.named_parameters().values()))

    @staticmethod
    def _prefixed(prefix: str, values: tp.Dict[str, tp.Any]) -> tp.Dict[str, tp.Any]:
        return {f"{prefix}.{name}": value for name, value in values.items()}
