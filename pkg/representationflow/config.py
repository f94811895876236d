import json
import typing as tp

import numpy as np

from dataclasses import dataclass, field, fields
from logging import getLogger

from .constants import DEFAULT_LAMBDA, DEFAULT_TAU, DEFAULT_THETA
from .exceptions import ConfigException
from .tensorcore import Precision

logger = getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """
    Settings of one CLI run. Field names double as the keys accepted in a JSON config file and as the click parameter
    names, so a file value and a flag always address the same setting.

    """

    command: str = ""
    inputs: tp.Tuple[str, ...] = ()
    tau: float = DEFAULT_TAU
    lam: float = DEFAULT_LAMBDA
    theta: float = DEFAULT_THETA
    iterations: int = 10
    c_prime: int = 8
    learn_flags: str = "divergence+scalars"
    seed: int = 0
    output: tp.Optional[str] = None
    output_dir: tp.Optional[str] = None
    precision: str = Precision.WIDE.value
    threads: int = 1
    overrides: tp.Dict[str, tp.Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tau", "lam", "theta"):
            value = getattr(self, name)
            if value is None or not np.isfinite(value) or value <= 0:
                raise ConfigException(f"{name} must be strictly positive, got {value}")
        for name in ("iterations", "c_prime", "threads"):
            if getattr(self, name) < 1:
                raise ConfigException(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.precision not in {precision.value for precision in Precision}:
            raise ConfigException(f"Unknown precision {self.precision!r}")

    @classmethod
    def keys(cls) -> tp.Set[str]:
        return {item.name for item in fields(cls)} - {"overrides"}

    @classmethod
    def from_options(cls, command: str, options: tp.Dict[str, tp.Any]) -> "RunConfig":
        """
        Split command options into the shared fields and command-specific overrides.

        :param command: Command name.
        :param options: Parsed click parameters.

        :return: Validated RunConfig.

        """

        shared = {key: value for key, value in options.items() if key in cls.keys()}
        overrides = {key: value for key, value in options.items() if key not in cls.keys()}
        return cls(command=command, overrides=overrides, **shared)

    @property
    def compute_precision(self) -> Precision:
        return Precision(self.precision)


def load_config_file(path: str, accepted: tp.Set[str]) -> tp.Dict[str, tp.Any]:
    """
    Read a flat JSON object of settings.

    :param path: JSON file.
    :param accepted: Setting names any command accepts.

    :return: Setting name to value mapping.

    """

    try:
        with open(path, "r", encoding="utf-8") as file:
            data = json.load(file)
    except (OSError, json.JSONDecodeError) as error:
        raise ConfigException(f"Cannot read config file {path}: {error}") from error
    if not isinstance(data, dict):
        raise ConfigException(f"Config file {path} must hold a JSON object")
    unknown = set(data) - accepted
    if unknown:
        raise ConfigException(f"Unknown config keys: {sorted(unknown)}")
    logger.info(f"Loaded {len(data)} settings from {path}")
    return data
