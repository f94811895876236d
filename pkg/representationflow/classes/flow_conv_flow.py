import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .base import BaseClass
from .flow_layer import FlowLayer, LayerTape, LayerWeights
from ..constants import MAX_FLOW_STAGES
from ..decorators import check_finite
from ..exceptions import ConfigException, InvalidParameterException, ShapeMismatchException
from ..tensorcore import FeatureMap, REPLICATE_1, channel_conv2d, channel_conv2d_backward
from ..types import ArrayDict, ScaleDict

logger = getLogger(__name__)


def check_flow_stages(stages: int) -> None:
    """
    Reject layer stackings with more than two chained flow stages.

    :param stages: Number of chained flow layers.

    """

    if stages < 1 or stages > MAX_FLOW_STAGES:
        raise ConfigException(f"Between 1 and {MAX_FLOW_STAGES} chained flow stages are supported, got {stages}")


@dataclass
class FcfTape:
    tape_a1: LayerTape
    tape_a2: LayerTape
    mid_in: tp.Tuple[np.ndarray, np.ndarray]
    tape_b: LayerTape


@dataclass
class FcfGradients:
    """
    Gradients of one flow-conv-flow pass: parameter gradients keyed like :meth:`FlowConvFlow.named_parameters` and the
    three frame gradients.

    """

    parameters: ArrayDict
    d_ft: np.ndarray
    d_ft1: np.ndarray
    d_ft2: np.ndarray

    def finite_arrays(self) -> tp.List[np.ndarray]:
        return list(self.parameters.values()) + [self.d_ft, self.d_ft1, self.d_ft2]


class FlowConvFlow(BaseClass):
    """
    Two chained flow layers. The first layer runs on ``(t, t+1)`` and ``(t+1, t+2)``, both results pass through a shared
    ``3 x 3`` convolution and the second layer computes the flow between them. Without a mid convolution this is
    flow-of-flow.
    """

    def __init__(
        self,
        weights_a: LayerWeights,
        weights_b: LayerWeights,
        mid: tp.Optional[np.ndarray] = None,
        mid_bias: tp.Optional[np.ndarray] = None,
        threads: int = 1,
    ) -> None:
        """
        :param weights_a: First-stage layer weights.
        :param weights_b: Second-stage layer weights, same channel count.
        :param mid: ``(C, C, 3, 3)`` mid convolution, ``None`` for flow-of-flow.
        :param mid_bias: ``(C,)`` mid bias, zeros by default.
        :param threads: Worker threads of both flow layers.

        """

        if weights_a.channels != weights_b.channels:
            raise ShapeMismatchException(
                f"Flow stages disagree in channels: {weights_a.channels} vs {weights_b.channels}"
            )
        channels = weights_a.channels
        if mid is not None and np.shape(mid) != (channels, channels, 3, 3):
            raise ShapeMismatchException(f"Mid convolution must be {(channels, channels, 3, 3)}, got {np.shape(mid)}")
        if mid is None and mid_bias is not None:
            raise InvalidParameterException("A mid bias needs a mid convolution")

        self.weights_a: LayerWeights = weights_a
        self.weights_b: LayerWeights = weights_b
        self.mid: tp.Optional[np.ndarray] = None if mid is None else np.array(mid, dtype=np.float64)
        self.mid_bias: tp.Optional[np.ndarray] = None
        if self.mid is not None:
            self.mid_bias = np.zeros(channels) if mid_bias is None else np.array(mid_bias, dtype=np.float64)
        self.layer_a: FlowLayer = FlowLayer(weights_a, threads)
        self.layer_b: FlowLayer = FlowLayer(weights_b, threads)

    @classmethod
    def create(
        cls,
        channels: int,
        c_prime: int,
        iterations: int,
        with_mid: bool = True,
        seed: int = 0,
        threads: int = 1,
    ) -> "FlowConvFlow":
        """
        Randomly initialized FcF (``with_mid``) or FoF stack.

        :param channels: Channel count ``C`` of both stages.
        :param c_prime: Reduced channel count of both stages.
        :param iterations: Unrolled flow rounds of both stages.
        :param with_mid: Insert the mid convolution.
        :param seed: Initialization seed.
        :param threads: Worker threads.

        :return: FlowConvFlow instance.

        """

        rng = np.random.default_rng(seed)
        weights_a = LayerWeights(channels, c_prime, iterations, seed=int(rng.integers(2**31)))
        weights_b = LayerWeights(channels, c_prime, iterations, seed=int(rng.integers(2**31)))
        mid = rng.normal(0.0, np.sqrt(1.0 / (channels * 9)), size=(channels, channels, 3, 3)) if with_mid else None
        return cls(weights_a, weights_b, mid, threads=threads)

    @property
    def channels(self) -> int:
        return self.weights_a.channels

    @property
    def has_mid(self) -> bool:
        return self.mid is not None

    def named_parameters(self) -> ArrayDict:
        parameters: ArrayDict = {}
        parameters.update(self._prefixed("a", self.weights_a.named_parameters()))
        if self.has_mid:
            parameters.update({"mid.weight": self.mid, "mid.bias": self.mid_bias})
        parameters.update(self._prefixed("b", self.weights_b.named_parameters()))
        return parameters

    def learning_scales(self) -> ScaleDict:
        scales: ScaleDict = {}
        scales.update(self._prefixed("a", self.weights_a.learning_scales()))
        if self.has_mid:
            scales.update({"mid.weight": 1.0, "mid.bias": 1.0})
        scales.update(self._prefixed("b", self.weights_b.learning_scales()))
        return scales

    def frozen_names(self) -> tp.Set[str]:
        return {f"a.{name}" for name in self.weights_a.frozen_names()} | {
            f"b.{name}" for name in self.weights_b.frozen_names()
        }

    def _mid(self, x: np.ndarray) -> np.ndarray:
        if not self.has_mid:
            return x
        return channel_conv2d(x, self.mid, self.mid_bias, REPLICATE_1)

    def forward(self, ft: np.ndarray, ft1: np.ndarray, ft2: np.ndarray) -> tp.Tuple[np.ndarray, FcfTape]:
        """
        :param ft: Frames at ``t``, ``(..., C, H, W)``.
        :param ft1: Frames at ``t + 1``.
        :param ft2: Frames at ``t + 2``.

        :return: Second-stage output and the tape.

        """

        if not ft.shape == ft1.shape == ft2.shape:
            raise ShapeMismatchException(f"Frame shapes differ: {ft.shape}, {ft1.shape}, {ft2.shape}")

        out_a1, tape_a1 = self.layer_a.forward(ft, ft1)
        out_a2, tape_a2 = self.layer_a.forward(ft1, ft2)
        output, tape_b = self.layer_b.forward(self._mid(out_a1), self._mid(out_a2))
        logger.debug(f"Flow-conv-flow forward on {ft.shape}, mid={'conv' if self.has_mid else 'identity'}")
        return output, FcfTape(tape_a1, tape_a2, (out_a1, out_a2), tape_b)

    def backward(self, tape: FcfTape, upstream: np.ndarray) -> FcfGradients:
        """
        Reverse pass of :meth:`forward`.

        :param tape: Tape of the forward call.
        :param upstream: Gradient of the output.

        :return: Parameter and frame gradients.

        """

        bundle_b = self.layer_b.backward(tape.tape_b, upstream)
        d_mid_out = (bundle_b.d_f1, bundle_b.d_f2)
        d_a_out = []
        d_mid_weight = None if not self.has_mid else np.zeros_like(self.mid)
        d_mid_bias = None if not self.has_mid else np.zeros_like(self.mid_bias)
        for d_out, mid_in in zip(d_mid_out, tape.mid_in):
            if self.has_mid:
                d_in, d_weight, d_bias = channel_conv2d_backward(d_out, mid_in, self.mid, REPLICATE_1)
                d_mid_weight += d_weight
                d_mid_bias += d_bias
                d_a_out.append(d_in)
            else:
                d_a_out.append(d_out)

        bundle_a1 = self.layer_a.backward(tape.tape_a1, d_a_out[0])
        bundle_a2 = self.layer_a.backward(tape.tape_a2, d_a_out[1])

        grads_a1 = self.weights_a.gradients_from(bundle_a1)
        grads_a2 = self.weights_a.gradients_from(bundle_a2)
        parameters: ArrayDict = self._prefixed("a", {name: grads_a1[name] + grads_a2[name] for name in grads_a1})
        if self.has_mid:
            parameters.update({"mid.weight": d_mid_weight, "mid.bias": d_mid_bias})
        parameters.update(self._prefixed("b", self.weights_b.gradients_from(bundle_b)))

        return FcfGradients(
            parameters=parameters,
            d_ft=bundle_a1.d_f1,
            d_ft1=bundle_a1.d_f2 + bundle_a2.d_f1,
            d_ft2=bundle_a2.d_f2,
        )


def _run(ft: FeatureMap, ft1: FeatureMap, ft2: FeatureMap, stack: FlowConvFlow) -> FeatureMap:
    if len({ft.precision, ft1.precision, ft2.precision}) != 1:
        raise InvalidParameterException("All feature maps must share one precision")
    output, _ = stack.forward(ft.data, ft1.data, ft2.data)
    return FeatureMap(output)


@check_finite
def flow_conv_flow(
    ft: FeatureMap,
    ft1: FeatureMap,
    ft2: FeatureMap,
    weights_a: LayerWeights,
    mid: np.ndarray,
    weights_b: LayerWeights,
    mid_bias: tp.Optional[np.ndarray] = None,
) -> FeatureMap:
    """
    Flow-conv-flow over three consecutive feature maps.

    :param ft: Feature map at ``t``.
    :param ft1: Feature map at ``t + 1``.
    :param ft2: Feature map at ``t + 2``.
    :param weights_a: First-stage layer weights.
    :param mid: ``(C, C, 3, 3)`` mid convolution weights.
    :param weights_b: Second-stage layer weights.
    :param mid_bias: Optional ``(C,)`` mid bias.

    :return: Second-stage output, shaped like the inputs.

    """

    return _run(ft, ft1, ft2, FlowConvFlow(weights_a, weights_b, mid, mid_bias))


@check_finite
def fof(
    ft: FeatureMap, ft1: FeatureMap, ft2: FeatureMap, weights_a: LayerWeights, weights_b: LayerWeights
) -> FeatureMap:
    """
    Flow-of-flow: :func:`flow_conv_flow` with the identity in place of the mid convolution.

    """

    return _run(ft, ft1, ft2, FlowConvFlow(weights_a, weights_b))
