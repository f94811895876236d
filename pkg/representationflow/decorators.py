import typing as tp

import numpy as np

from functools import wraps
from logging import getLogger

from .exceptions import NonFiniteException

logger = getLogger(__name__)


def _iter_arrays(value: tp.Any) -> tp.Iterator[np.ndarray]:
    """
    Walk an argument or a result and yield every array it carries. Understands bare arrays, FeatureMap-like objects
    with a ``data`` array, objects exposing ``finite_arrays()`` and tuples/lists of those. Anything else (tapes,
    configs, scalars) is skipped.

    :param value: Argument or result to walk.

    :return: Iterator over contained arrays.

    """

    if isinstance(value, np.ndarray):
        yield value
    elif isinstance(value, (tuple, list)):
        for item in value:
            yield from _iter_arrays(item)
    elif hasattr(value, "finite_arrays"):
        yield from value.finite_arrays()
    elif isinstance(getattr(value, "data", None), np.ndarray):
        yield value.data


def check_finite(func):
    """
    Reject NaN/Inf tensors on entry to and exit from a public operation.

    :param func: wrapped function.

    :return: wrapped function after augmentations.

    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        """
        Check every array-carrying argument, call the function, check every array-carrying result.

        :param args: Wrapped function args.
        :param kwargs: Wrapped function kwargs.

        """

        for arg in list(args) + list(kwargs.values()):
            for array in _iter_arrays(arg):
                if array.dtype.kind == "f" and not np.all(np.isfinite(array)):
                    raise NonFiniteException(f"Non-finite input passed to {func.__name__}")

        res = func(*args, **kwargs)

        for array in _iter_arrays(res):
            if array.dtype.kind == "f" and not np.all(np.isfinite(array)):
                logger.warning(f"{func.__name__} produced non-finite values")
                raise NonFiniteException(f"Non-finite output produced by {func.__name__}")

        return res

    return wrapper
