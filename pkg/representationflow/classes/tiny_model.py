import typing as tp

import numpy as np

from dataclasses import dataclass
from enum import Enum
from logging import getLogger

from .base import BaseClass
from .flow_conv_flow import FlowConvFlow, check_flow_stages
from .flow_layer import FlowLayer, LayerWeights
from .flow_params import FlowParams, LearnFlags
from ..constants import CROSS_ENTROPY_FLOOR, DEFAULT_ITERATIONS
from ..exceptions import InvalidParameterException, ShapeMismatchException
from ..tensorcore import Precision, REPLICATE_1, channel_conv2d, channel_conv2d_backward
from ..types import ArrayDict, ScaleDict

logger = getLogger(__name__)

TOY_FEATURES = 16
TOY_C_PRIME = 8


class FlowMode(Enum):
    """
    What sits between the two convolution stages: one flow layer, flow-conv-flow, flow-of-flow, or the identity on
    frame ``t`` (appearance-only ablation).

    """

    FLOW = "flow"
    FCF = "fcf"
    FOF = "fof"
    IDENTITY = "identity"

    @property
    def stages(self) -> int:
        return {FlowMode.FLOW: 1, FlowMode.FCF: 2, FlowMode.FOF: 2, FlowMode.IDENTITY: 0}[self]

    @property
    def window(self) -> int:
        """
        Frames consumed per prediction step.

        """

        return {FlowMode.FLOW: 2, FlowMode.FCF: 3, FlowMode.FOF: 3, FlowMode.IDENTITY: 2}[self]


def cross_entropy(probabilities: np.ndarray, label: int) -> float:
    """
    ``-log(max(p_label, 1e-12))``.

    :param probabilities: Probability vector of length ``K``.
    :param label: Class index.

    :return: Loss value.

    """

    probabilities = np.asarray(probabilities)
    if not 0 <= label < probabilities.shape[-1]:
        raise InvalidParameterException(f"Label {label} out of range for {probabilities.shape[-1]} classes")
    return float(-np.log(max(float(probabilities[label]), CROSS_ENTROPY_FLOOR)))


@dataclass
class ModelTape:
    frames: np.ndarray
    pre_a: np.ndarray
    act_a: np.ndarray
    flow_tape: tp.Any
    flow_out: np.ndarray
    pre_b: np.ndarray
    pooled: np.ndarray
    softmax: np.ndarray


def _he(rng: np.random.Generator, shape: tp.Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class TinyModel(BaseClass):
    """
    Appearance convolution (``C -> 16`` + ReLU) per frame, a representation flow stage on consecutive frames,
    a second convolution (``16 -> 16`` + ReLU), global average pooling, a linear classifier, softmax per time step and
    the average of the per-step probabilities.
    """

    def __init__(
        self,
        channels: int = 1,
        num_classes: int = 4,
        c_prime: int = TOY_C_PRIME,
        iterations: int = DEFAULT_ITERATIONS,
        mode: FlowMode = FlowMode.FLOW,
        learn_flags: tp.Optional[LearnFlags] = None,
        precision: Precision = Precision.WIDE,
        seed: int = 0,
        threads: int = 1,
    ) -> None:
        """
        :param channels: Input channels.
        :param num_classes: Number of classes ``K``.
        :param c_prime: Reduced channel count of the flow layers.
        :param iterations: Unrolled flow rounds.
        :param mode: Flow stage variant.
        :param learn_flags: Learned flow parameter groups.
        :param precision: Compute precision.
        :param seed: Initialization seed.
        :param threads: Flow worker threads.

        """

        if mode is not FlowMode.IDENTITY:
            check_flow_stages(mode.stages)
        if num_classes < 2:
            raise InvalidParameterException(f"num_classes must be >= 2, got {num_classes}")

        rng = np.random.default_rng(seed)
        self.channels: int = channels
        self.num_classes: int = num_classes
        self.mode: FlowMode = mode
        self.precision: Precision = precision
        self.stage_a_weight: np.ndarray = _he(rng, (TOY_FEATURES, channels, 3, 3), channels * 9)
        self.stage_a_bias: np.ndarray = np.zeros(TOY_FEATURES)
        self.stage_b_weight: np.ndarray = _he(rng, (TOY_FEATURES, TOY_FEATURES, 3, 3), TOY_FEATURES * 9)
        self.stage_b_bias: np.ndarray = np.zeros(TOY_FEATURES)
        self.classifier_weight: np.ndarray = rng.normal(0.0, np.sqrt(1.0 / TOY_FEATURES), (num_classes, TOY_FEATURES))
        self.classifier_bias: np.ndarray = np.zeros(num_classes)

        flow_seed = int(rng.integers(2**31))
        self.flow: tp.Optional[BaseClass] = None
        self._runner: tp.Any = None
        if mode is FlowMode.FLOW:
            flow_params = FlowParams(learn_flags=learn_flags)
            weights = LayerWeights(TOY_FEATURES, c_prime, iterations, flow_params, seed=flow_seed)
            self.flow, self._runner = weights, FlowLayer(weights, threads)
        elif mode in (FlowMode.FCF, FlowMode.FOF):
            stack = FlowConvFlow.create(
                TOY_FEATURES, c_prime, iterations, with_mid=mode is FlowMode.FCF, seed=flow_seed, threads=threads
            )
            for weights in (stack.weights_a, stack.weights_b):
                weights.flow_params.learn_flags = learn_flags or LearnFlags()
            self.flow, self._runner = stack, stack

    def flow_layers(self) -> tp.List[LayerWeights]:
        if isinstance(self.flow, LayerWeights):
            return [self.flow]
        if isinstance(self.flow, FlowConvFlow):
            return [self.flow.weights_a, self.flow.weights_b]
        return []

    def configure_flow(
        self, learn_flags: tp.Optional[LearnFlags], iterations: tp.Optional[int], lr_scale: float
    ) -> None:
        """
        Apply training-time flow settings to every flow layer.

        :param learn_flags: Learned groups, unchanged when ``None``.
        :param iterations: Unrolled rounds, unchanged when ``None``.
        :param lr_scale: Learning-rate multiplier of the flow parameters.

        """

        for weights in self.flow_layers():
            if learn_flags is not None:
                weights.flow_params.learn_flags = learn_flags
            if iterations is not None:
                if iterations < 1:
                    raise InvalidParameterException(f"iterations must be >= 1, got {iterations}")
                weights.iterations = iterations
            weights.flow_params.lr_scale = lr_scale

    def named_parameters(self) -> ArrayDict:
        parameters: ArrayDict = {
            "stage_a.weight": self.stage_a_weight,
            "stage_a.bias": self.stage_a_bias,
        }
        if self.flow is not None:
            parameters.update(self._prefixed("flow", self.flow.named_parameters()))
        parameters.update(
            {
                "stage_b.weight": self.stage_b_weight,
                "stage_b.bias": self.stage_b_bias,
                "classifier.weight": self.classifier_weight,
                "classifier.bias": self.classifier_bias,
            }
        )
        return parameters

    def learning_scales(self) -> ScaleDict:
        scales: ScaleDict = {name: 1.0 for name in self.named_parameters()}
        if self.flow is not None:
            scales.update(self._prefixed("flow", self.flow.learning_scales()))
        return scales

    def frozen_names(self) -> tp.Set[str]:
        if self.flow is None:
            return set()
        return {f"flow.{name}" for name in self.flow.frozen_names()}

    def _flow_forward(self, act_a: np.ndarray) -> tp.Tuple[np.ndarray, tp.Any]:
        if self.mode is FlowMode.IDENTITY:
            return act_a[:, :-1], None
        if self.mode is FlowMode.FLOW:
            return self._runner.forward(act_a[:, :-1], act_a[:, 1:])
        return self._runner.forward(act_a[:, :-2], act_a[:, 1:-1], act_a[:, 2:])

    def forward(self, frames: np.ndarray) -> tp.Tuple[np.ndarray, ModelTape]:
        """
        :param frames: Batch of videos, ``(N, T, C, H, W)``.

        :return: ``(N, K)`` class probabilities and the tape.

        """

        if frames.ndim != 5 or frames.shape[2] != self.channels:
            raise ShapeMismatchException(f"Expected (N, T, {self.channels}, H, W) frames, got {frames.shape}")
        if frames.shape[1] < self.mode.window:
            raise ShapeMismatchException(f"{self.mode.value} needs at least {self.mode.window} frames")

        frames = frames.astype(self.precision.dtype)
        pre_a = channel_conv2d(frames, self.stage_a_weight, self.stage_a_bias, REPLICATE_1)
        act_a = np.maximum(pre_a, 0.0)
        flow_out, flow_tape = self._flow_forward(act_a)
        pre_b = channel_conv2d(flow_out, self.stage_b_weight, self.stage_b_bias, REPLICATE_1)
        pooled = np.maximum(pre_b, 0.0).mean(axis=(-2, -1))
        logits = pooled @ self.classifier_weight.T.astype(pooled.dtype) + self.classifier_bias.astype(pooled.dtype)
        shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
        softmax = shifted / shifted.sum(axis=-1, keepdims=True)
        probabilities = softmax.mean(axis=1)
        return probabilities, ModelTape(frames, pre_a, act_a, flow_tape, flow_out, pre_b, pooled, softmax)

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return self.forward(frames)[0]

    def _flow_backward(self, tape: ModelTape, d_flow_out: np.ndarray) -> tp.Tuple[np.ndarray, ArrayDict]:
        d_act_a = np.zeros_like(tape.act_a)
        if self.mode is FlowMode.IDENTITY:
            d_act_a[:, :-1] += d_flow_out
            return d_act_a, {}
        if self.mode is FlowMode.FLOW:
            bundle = self._runner.backward(tape.flow_tape, d_flow_out)
            d_act_a[:, :-1] += bundle.d_f1
            d_act_a[:, 1:] += bundle.d_f2
            return d_act_a, self.flow.gradients_from(bundle)
        grads = self._runner.backward(tape.flow_tape, d_flow_out)
        d_act_a[:, :-2] += grads.d_ft
        d_act_a[:, 1:-1] += grads.d_ft1
        d_act_a[:, 2:] += grads.d_ft2
        return d_act_a, grads.parameters

    def loss_and_gradients(self, frames: np.ndarray, labels: np.ndarray) -> tp.Tuple[float, ArrayDict]:
        """
        Mean cross-entropy over the batch and its gradient for every parameter.

        :param frames: ``(N, T, C, H, W)`` videos.
        :param labels: ``(N,)`` class indices.

        :return: Loss and name to gradient mapping.

        """

        probabilities, tape = self.forward(frames)
        batch = probabilities.shape[0]
        loss = float(np.mean([cross_entropy(probabilities[n], int(labels[n])) for n in range(batch)]))

        d_prob = np.zeros_like(probabilities)
        picked = probabilities[np.arange(batch), labels]
        d_prob[np.arange(batch), labels] = np.where(picked > CROSS_ENTROPY_FLOOR, -1.0 / (batch * picked), 0.0)

        steps = tape.softmax.shape[1]
        d_soft = np.broadcast_to(d_prob[:, np.newaxis, :] / steps, tape.softmax.shape)
        d_logits = tape.softmax * (d_soft - np.sum(d_soft * tape.softmax, axis=-1, keepdims=True))

        grads: ArrayDict = {
            "classifier.weight": np.einsum("ntk,ntf->kf", d_logits, tape.pooled),
            "classifier.bias": d_logits.sum(axis=(0, 1)),
        }
        d_pooled = d_logits @ self.classifier_weight.astype(d_logits.dtype)
        height, width = tape.pre_b.shape[-2:]
        d_pre_b = np.where(tape.pre_b > 0, d_pooled[..., np.newaxis, np.newaxis] / (height * width), 0.0)
        d_flow_out, grads["stage_b.weight"], grads["stage_b.bias"] = channel_conv2d_backward(
            d_pre_b.astype(tape.pre_b.dtype), tape.flow_out, self.stage_b_weight, REPLICATE_1
        )

        d_act_a, flow_grads = self._flow_backward(tape, d_flow_out)
        grads.update(self._prefixed("flow", flow_grads))

        d_pre_a = np.where(tape.pre_a > 0, d_act_a, 0.0).astype(tape.pre_a.dtype)
        _, grads["stage_a.weight"], grads["stage_a.bias"] = channel_conv2d_backward(
            d_pre_a, tape.frames, self.stage_a_weight, REPLICATE_1
        )
        return loss, grads
