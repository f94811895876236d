import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .base import BaseClass
from ..constants import (
    DEFAULT_LAMBDA,
    DEFAULT_TAU,
    DEFAULT_THETA,
    DIVERGENCE_X,
    DIVERGENCE_Y,
    FLOW_LEARNING_RATE_SCALE,
    SOBEL_X,
    SOBEL_Y,
)
from ..exceptions import ConfigException, InvalidParameterException, ShapeMismatchException
from ..tvl1 import TvParams
from ..types import ArrayDict, ScaleDict

logger = getLogger(__name__)


@dataclass(frozen=True)
class LearnFlags:
    """
    Which parameter groups of the flow layer are learned: Sobel kernels, divergence kernels, ``tau/lambda/theta``.

    """

    sobel: bool = False
    divergence: bool = True
    scalars: bool = True

    @classmethod
    def preset(cls, name: str) -> "LearnFlags":
        """
        Named group selections, one per "what to learn" ablation row.

        :param name: One of ``none``, ``sobel``, ``divergence``, ``scalars``, ``divergence+scalars``, ``all``.

        :return: Flags.

        """

        presets: tp.Dict[str, LearnFlags] = {
            "none": cls(False, False, False),
            "sobel": cls(True, False, False),
            "divergence": cls(False, True, False),
            "scalars": cls(False, False, True),
            "divergence+scalars": cls(False, True, True),
            "all": cls(True, True, True),
        }
        if name not in presets:
            raise ConfigException(f"Unknown learn-flags preset {name!r}, choose from {sorted(presets)}")
        return presets[name]

    @property
    def name(self) -> str:
        groups = [group for group in ("sobel", "divergence", "scalars") if getattr(self, group)]
        if not groups:
            return "none"
        if len(groups) == 3:
            return "all"
        return "+".join(groups)

    @property
    def any(self) -> bool:
        return self.sobel or self.divergence or self.scalars


def _kernel(values: tp.Optional[tp.Any], default: tp.List[tp.List[float]], name: str) -> np.ndarray:
    kernel = np.array(default if values is None else values, dtype=np.float64)
    expected = np.asarray(default).shape
    if kernel.shape != expected:
        raise ShapeMismatchException(f"{name} must have shape {expected}, got {kernel.shape}")
    return kernel


class FlowParams(BaseClass):
    """
    Learnable parameters of the representation flow iteration. ``tau``, ``lambda`` and ``theta`` are stored as
    logarithms so every optimizer step keeps them strictly positive; kernel shapes are fixed.
    """

    SCALARS = ("log_tau", "log_lambda", "log_theta")
    DIVERGENCE = ("w_x", "w_y")
    SOBEL = ("sobel_x", "sobel_y")

    def __init__(
        self,
        tau: float = DEFAULT_TAU,
        lam: float = DEFAULT_LAMBDA,
        theta: float = DEFAULT_THETA,
        w_x: tp.Optional[tp.Any] = None,
        w_y: tp.Optional[tp.Any] = None,
        sobel_x: tp.Optional[tp.Any] = None,
        sobel_y: tp.Optional[tp.Any] = None,
        learn_flags: tp.Optional[LearnFlags] = None,
        lr_scale: float = FLOW_LEARNING_RATE_SCALE,
    ) -> None:
        """
        Build parameters from their printed (not logarithmic) values.

        :param tau: Time step, strictly positive.
        :param lam: Data-term weight, strictly positive.
        :param theta: Coupling weight, strictly positive.
        :param w_x: ``1 x 2`` divergence kernel, ``[-1, 1]`` by default.
        :param w_y: ``2 x 1`` divergence kernel, ``[-1; 1]`` by default.
        :param sobel_x: ``3 x 3`` x-gradient kernel.
        :param sobel_y: ``3 x 3`` y-gradient kernel.
        :param learn_flags: Learned groups; divergence and scalars by default.
        :param lr_scale: Multiplier of the base learning rate for every flow parameter.

        """

        for name, value in (("tau", tau), ("lambda", lam), ("theta", theta)):
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterException(f"{name} must be strictly positive, got {value}")
        self.log_tau: np.ndarray = np.array(np.log(tau))
        self.log_lambda: np.ndarray = np.array(np.log(lam))
        self.log_theta: np.ndarray = np.array(np.log(theta))
        self.w_x: np.ndarray = _kernel(w_x, DIVERGENCE_X, "w_x")
        self.w_y: np.ndarray = _kernel(w_y, DIVERGENCE_Y, "w_y")
        self.sobel_x: np.ndarray = _kernel(sobel_x, SOBEL_X, "sobel_x")
        self.sobel_y: np.ndarray = _kernel(sobel_y, SOBEL_Y, "sobel_y")
        self.learn_flags: LearnFlags = learn_flags or LearnFlags()
        self.lr_scale: float = lr_scale

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @property
    def lam(self) -> float:
        return float(np.exp(self.log_lambda))

    @property
    def theta(self) -> float:
        return float(np.exp(self.log_theta))

    def to_tv_params(self) -> TvParams:
        """
        The current scalar values as fixed reference-solver parameters.

        :return: TvParams instance.

        """

        return TvParams(tau=self.tau, lam=self.lam, theta=self.theta)

    def copy(self) -> "FlowParams":
        clone = FlowParams(
            self.tau,
            self.lam,
            self.theta,
            self.w_x,
            self.w_y,
            self.sobel_x,
            self.sobel_y,
            self.learn_flags,
            self.lr_scale,
        )
        clone.load_state_dict(self.state_dict())
        return clone

    def named_parameters(self) -> ArrayDict:
        return {
            "log_tau": self.log_tau,
            "log_lambda": self.log_lambda,
            "log_theta": self.log_theta,
            "w_x": self.w_x,
            "w_y": self.w_y,
            "sobel_x": self.sobel_x,
            "sobel_y": self.sobel_y,
        }

    def learning_scales(self) -> ScaleDict:
        return {name: self.lr_scale for name in self.named_parameters()}

    def frozen_names(self) -> tp.Set[str]:
        frozen: tp.Set[str] = set()
        if not self.learn_flags.scalars:
            frozen.update(self.SCALARS)
        if not self.learn_flags.divergence:
            frozen.update(self.DIVERGENCE)
        if not self.learn_flags.sobel:
            frozen.update(self.SOBEL)
        return frozen

    def gradients_from(self, bundle: tp.Any) -> ArrayDict:
        """
        Map a gradient bundle onto the stored parameters. Scalar gradients are chained into log space:
        ``dL/dlog(x) = x * dL/dx``.

        :param bundle: GradientBundle of a forward/backward pair that used these parameters.

        :return: Name to gradient mapping keyed like :meth:`named_parameters`.

        """

        return {
            "log_tau": np.array(bundle.d_tau * self.tau),
            "log_lambda": np.array(bundle.d_lambda * self.lam),
            "log_theta": np.array(bundle.d_theta * self.theta),
            "w_x": np.asarray(bundle.d_wx),
            "w_y": np.asarray(bundle.d_wy),
            "sobel_x": np.asarray(bundle.d_sobel_x),
            "sobel_y": np.asarray(bundle.d_sobel_y),
        }
