import typing as tp


class ShapeMismatchException(Exception):
    """
    Operands disagree in shape: frames of different sizes, a kernel larger than its padded input or weights that do
    not fit the channel count.

    """

    pass


class NonFiniteException(Exception):
    """
    A tensor entering or leaving a public operation holds NaN or Inf values.

    """

    pass


class InvalidParameterException(Exception):
    """
    A parameter is out of its domain: non-positive ``tau``, ``lambda`` or ``theta``, zero iterations, an empty tensor
    or a negative padding amount.

    """

    pass


class TapeMismatchException(Exception):
    """
    A backward pass was given a tape or an upstream gradient that does not come from the matching forward call.

    """

    pass


class MalformedFileException(Exception):
    """
    A flow file, image or checkpoint could not be parsed: wrong magic, truncated body or unsupported header.

    """

    pass


class DivergenceException(Exception):
    """
    Training produced a non-finite loss. The step index at which it happened is kept in ``step``.

    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step: int = step


class GradientCheckException(Exception):
    """
    Reverse-mode gradients disagree with finite differences. Failing leaf names are kept in ``leaves``.

    """

    def __init__(self, message: str, leaves: tp.List[str]):
        super().__init__(message)
        self.leaves: tp.List[str] = leaves


class ConfigException(Exception):
    """
    Run configuration is invalid: unknown keys, non-positive overrides or an unsupported layer stacking.

    """

    pass
