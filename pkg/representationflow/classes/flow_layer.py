import typing as tp

import numpy as np

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from logging import getLogger

from .base import BaseClass
from .flow_params import FlowParams
from ..constants import DEFAULT_C_PRIME, DEFAULT_ITERATIONS, NORMALIZED_MAX
from ..decorators import check_finite
from ..exceptions import InvalidParameterException, ShapeMismatchException, TapeMismatchException
from ..repflow import FlowTape, GradientBundle, flow_kernels, unroll_backward, unroll_forward
from ..tensorcore import (
    FeatureMap,
    NO_PADDING,
    Precision,
    REPLICATE_1,
    channel_conv2d,
    channel_conv2d_backward,
)
from ..types import ArrayDict, ScaleDict

logger = getLogger(__name__)


@dataclass
class NormalizeTape:
    """
    Record of a ``[0, 255]`` normalization: input, per-plane extremes, their first flat positions and the constant
    plane mask.

    """

    x: np.ndarray
    low: np.ndarray
    high: np.ndarray
    argmin: np.ndarray
    argmax: np.ndarray
    constant: np.ndarray


def normalize_forward(x: np.ndarray) -> tp.Tuple[np.ndarray, NormalizeTape]:
    """
    Map every ``H x W`` plane of ``x`` affinely onto ``[0, 255]``. Planes with ``max - min <= eps`` become zeros.

    :param x: Array of shape ``(..., H, W)``.

    :return: Normalized array and its tape.

    """

    epsilon = Precision.of(x).epsilon
    flat = x.reshape(x.shape[:-2] + (-1,))
    argmin = np.argmin(flat, axis=-1)
    argmax = np.argmax(flat, axis=-1)
    low = np.take_along_axis(flat, argmin[..., np.newaxis], axis=-1)[..., 0]
    high = np.take_along_axis(flat, argmax[..., np.newaxis], axis=-1)[..., 0]
    span = high - low
    constant = span <= epsilon
    if np.any(constant):
        logger.warning(f"{int(constant.sum())} constant planes normalized to zero")

    safe_span = np.where(constant, 1.0, span).astype(x.dtype)[..., np.newaxis, np.newaxis]
    scaled = NORMALIZED_MAX * (x - low[..., np.newaxis, np.newaxis]) / safe_span
    y = np.where(constant[..., np.newaxis, np.newaxis], 0.0, scaled).astype(x.dtype)
    return y, NormalizeTape(x, low, high, argmin, argmax, constant)


def _add_at(flat: np.ndarray, index: np.ndarray, values: np.ndarray) -> None:
    index = index[..., np.newaxis]
    np.put_along_axis(flat, index, np.take_along_axis(flat, index, -1) + values[..., np.newaxis], -1)


def normalize_backward(tape: NormalizeTape, upstream: np.ndarray) -> np.ndarray:
    """
    Reverse of :func:`normalize_forward`. The min/max subgradient goes to the first extremal element in row-major
    order; constant planes pass no gradient.

    :param tape: Tape of the forward call.
    :param upstream: Gradient of the normalized array.

    :return: Gradient of the input.

    """

    x = tape.x
    if upstream.shape != x.shape:
        raise TapeMismatchException(f"Upstream shape {upstream.shape} does not match normalized input {x.shape}")

    span = np.where(tape.constant, 1.0, tape.high - tape.low)[..., np.newaxis, np.newaxis]
    low = tape.low[..., np.newaxis, np.newaxis]
    high = tape.high[..., np.newaxis, np.newaxis]
    live = ~tape.constant

    dx = upstream * NORMALIZED_MAX / span
    d_low = np.sum(upstream * NORMALIZED_MAX * (x - high) / (span * span), axis=(-2, -1))
    d_high = -np.sum(upstream * NORMALIZED_MAX * (x - low) / (span * span), axis=(-2, -1))

    flat = dx.reshape(x.shape[:-2] + (-1,))
    _add_at(flat, tape.argmin, d_low)
    _add_at(flat, tape.argmax, d_high)
    dx = flat.reshape(x.shape)
    return np.where(live[..., np.newaxis, np.newaxis], dx, 0.0).astype(x.dtype)


@check_finite
def normalize_255(feature_map: FeatureMap) -> tp.Tuple[FeatureMap, NormalizeTape]:
    """
    Per-channel affine normalization onto ``[0, 255]``.

    :param feature_map: Input map.

    :return: Normalized map and a tape for :func:`normalize_backward`.

    """

    y, tape = normalize_forward(feature_map.data)
    return FeatureMap(y), tape


class LayerWeights(BaseClass):
    """
    Weights of one representation flow layer: the ``1 x 1`` channel reduction ``C -> C'`` (no bias), the ``3 x 3``
    expansion ``2C' -> C`` with bias, and the flow parameters.
    """

    def __init__(
        self,
        channels: int,
        c_prime: int = DEFAULT_C_PRIME,
        iterations: int = DEFAULT_ITERATIONS,
        flow_params: tp.Optional[FlowParams] = None,
        seed: int = 0,
    ) -> None:
        """
        Create randomly initialized layer weights.

        :param channels: Input and output channel count ``C``.
        :param c_prime: Reduced channel count ``C'``.
        :param iterations: Unrolled flow rounds.
        :param flow_params: Flow parameters, defaults when omitted.
        :param seed: Seed of the weight initialization.

        """

        if channels < 1 or c_prime < 1:
            raise InvalidParameterException(f"Channel counts must be >= 1, got C={channels}, C'={c_prime}")
        if iterations < 1:
            raise InvalidParameterException(f"iterations must be >= 1, got {iterations}")

        rng = np.random.default_rng(seed)
        self.channels: int = channels
        self.c_prime: int = c_prime
        self.iterations: int = iterations
        self.flow_params: FlowParams = flow_params or FlowParams()
        self.reduce: np.ndarray = rng.normal(0.0, np.sqrt(1.0 / channels), size=(c_prime, channels))
        self.expand: np.ndarray = rng.normal(0.0, np.sqrt(1.0 / (2 * c_prime * 9)), size=(channels, 2 * c_prime, 3, 3))
        self.expand_bias: np.ndarray = np.zeros(channels)

    def named_parameters(self) -> ArrayDict:
        parameters: ArrayDict = {"reduce": self.reduce, "expand": self.expand, "expand_bias": self.expand_bias}
        parameters.update(self._prefixed("flow", self.flow_params.named_parameters()))
        return parameters

    def learning_scales(self) -> ScaleDict:
        scales: ScaleDict = {"reduce": 1.0, "expand": 1.0, "expand_bias": 1.0}
        scales.update(self._prefixed("flow", self.flow_params.learning_scales()))
        return scales

    def frozen_names(self) -> tp.Set[str]:
        return {f"flow.{name}" for name in self.flow_params.frozen_names()}

    def gradients_from(self, bundle: GradientBundle) -> ArrayDict:
        """
        Map a layer gradient bundle onto :meth:`named_parameters` names.

        :param bundle: Bundle returned by :meth:`FlowLayer.backward`.

        :return: Name to gradient mapping.

        """

        grads: ArrayDict = {"reduce": bundle.d_reduce, "expand": bundle.d_expand, "expand_bias": bundle.d_expand_bias}
        grads.update(self._prefixed("flow", self.flow_params.gradients_from(bundle)))
        return grads


@dataclass
class LayerTape:
    frames_t: np.ndarray
    frames_t1: np.ndarray
    norm_t: NormalizeTape
    norm_t1: NormalizeTape
    flow_tapes: tp.List[FlowTape]
    stack: np.ndarray
    plane_shape: tp.Tuple[int, ...]


def _chunks(count: int, parts: int) -> tp.List[slice]:
    parts = max(1, min(parts, count))
    bounds = np.linspace(0, count, parts + 1).astype(int)
    return [slice(int(start), int(stop)) for start, stop in zip(bounds[:-1], bounds[1:])]


class FlowLayer:
    """
    The representation flow layer over batched feature maps. Frames are arrays of shape ``(..., C, H, W)``; every
    leading index is an independent frame pair and every reduced channel gets its own flow, all sharing one set of
    flow parameters. With ``threads > 1`` the independent planes are split into chunks solved in a thread pool and
    gathered back in chunk order.
    """

    def __init__(self, weights: LayerWeights, threads: int = 1) -> None:
        if threads < 1:
            raise InvalidParameterException(f"threads must be >= 1, got {threads}")
        self.weights: LayerWeights = weights
        self.threads: int = threads

    def _reduce_kernel(self) -> np.ndarray:
        return self.weights.reduce[:, :, np.newaxis, np.newaxis]

    def _map_chunks(self, func: tp.Callable[[slice], tp.Any], count: int) -> tp.List[tp.Any]:
        slices = _chunks(count, self.threads)
        if len(slices) == 1:
            return [func(slices[0])]
        with ThreadPoolExecutor(max_workers=len(slices)) as executor:
            return list(executor.map(func, slices))

    def forward(self, frames_t: np.ndarray, frames_t1: np.ndarray) -> tp.Tuple[np.ndarray, LayerTape]:
        """
        Reduce, normalize, compute flow per channel, stack ``(u_x, u_y)`` per channel and expand back to ``C``.

        :param frames_t: Frames at time ``t``, ``(..., C, H, W)``.
        :param frames_t1: Frames at time ``t + 1``, same shape.

        :return: Output of the input's shape and the layer tape.

        """

        if frames_t.shape != frames_t1.shape:
            raise ShapeMismatchException(f"Frame shapes differ: {frames_t.shape} vs {frames_t1.shape}")
        if frames_t.ndim < 3 or frames_t.shape[-3] != self.weights.channels:
            raise ShapeMismatchException(
                f"Layer expects {self.weights.channels} channels, got input of shape {frames_t.shape}"
            )

        params = self.weights.flow_params
        reduced_t = channel_conv2d(frames_t, self._reduce_kernel(), None, NO_PADDING)
        reduced_t1 = channel_conv2d(frames_t1, self._reduce_kernel(), None, NO_PADDING)
        norm_t, norm_tape_t = normalize_forward(reduced_t)
        norm_t1, norm_tape_t1 = normalize_forward(reduced_t1)

        plane_shape = norm_t.shape
        planes_t = norm_t.reshape((-1,) + plane_shape[-2:])
        planes_t1 = norm_t1.reshape((-1,) + plane_shape[-2:])
        kernels = flow_kernels(params)
        tau, lam, theta = params.tau, params.lam, params.theta

        def _solve(part: slice) -> tp.Tuple[np.ndarray, np.ndarray, FlowTape]:
            return unroll_forward(planes_t[part], planes_t1[part], tau, lam, theta, kernels, self.weights.iterations)

        results = self._map_chunks(_solve, planes_t.shape[0])
        u_x = np.concatenate([result[0] for result in results]).reshape(plane_shape)
        u_y = np.concatenate([result[1] for result in results]).reshape(plane_shape)

        stack = np.stack([u_x, u_y], axis=-3).reshape(plane_shape[:-3] + (2 * plane_shape[-3],) + plane_shape[-2:])
        output = channel_conv2d(stack, self.weights.expand, self.weights.expand_bias, REPLICATE_1)
        logger.debug(
            f"Flow layer forward on {planes_t.shape[0]} planes of {plane_shape[-2]}x{plane_shape[-1]}, "
            f"{self.weights.iterations} iterations"
        )
        tape = LayerTape(
            frames_t, frames_t1, norm_tape_t, norm_tape_t1, [result[2] for result in results], stack, plane_shape
        )
        return output, tape

    def backward(self, tape: LayerTape, upstream: np.ndarray) -> GradientBundle:
        """
        Reverse pass of :meth:`forward`.

        :param tape: Tape of the forward call.
        :param upstream: Gradient of the layer output.

        :return: GradientBundle with every layer leaf filled in; ``d_f1``/``d_f2`` are the frame gradients.

        """

        if upstream.shape != tape.frames_t.shape:
            raise TapeMismatchException(
                f"Upstream shape {upstream.shape} does not match layer output {tape.frames_t.shape}"
            )

        d_stack, d_expand, d_expand_bias = channel_conv2d_backward(
            upstream, tape.stack, self.weights.expand, REPLICATE_1
        )
        plane_shape = tape.plane_shape
        d_pairs = d_stack.reshape(plane_shape[:-3] + (plane_shape[-3], 2) + plane_shape[-2:])
        d_u_x = d_pairs[..., 0, :, :].reshape((-1,) + plane_shape[-2:])
        d_u_y = d_pairs[..., 1, :, :].reshape((-1,) + plane_shape[-2:])

        offsets = np.cumsum([0] + [flow_tape.f1.shape[0] for flow_tape in tape.flow_tapes])
        parts = [slice(int(start), int(stop)) for start, stop in zip(offsets[:-1], offsets[1:])]

        def _reverse(index: int) -> GradientBundle:
            part = parts[index]
            return unroll_backward(tape.flow_tapes[index], d_u_x[part], d_u_y[part])

        if len(parts) == 1:
            bundles = [_reverse(0)]
        else:
            with ThreadPoolExecutor(max_workers=len(parts)) as executor:
                bundles = list(executor.map(_reverse, range(len(parts))))

        bundle = GradientBundle(
            d_tau=0.0,
            d_lambda=0.0,
            d_theta=0.0,
            d_wx=np.zeros_like(self.weights.flow_params.w_x),
            d_wy=np.zeros_like(self.weights.flow_params.w_y),
            d_sobel_x=np.zeros_like(self.weights.flow_params.sobel_x),
            d_sobel_y=np.zeros_like(self.weights.flow_params.sobel_y),
        )
        for part_bundle in bundles:
            bundle.d_tau += part_bundle.d_tau
            bundle.d_lambda += part_bundle.d_lambda
            bundle.d_theta += part_bundle.d_theta
            bundle.d_wx = bundle.d_wx + part_bundle.d_wx
            bundle.d_wy = bundle.d_wy + part_bundle.d_wy
            bundle.d_sobel_x = bundle.d_sobel_x + part_bundle.d_sobel_x
            bundle.d_sobel_y = bundle.d_sobel_y + part_bundle.d_sobel_y

        d_norm_t = np.concatenate([part_bundle.d_f1 for part_bundle in bundles]).reshape(plane_shape)
        d_norm_t1 = np.concatenate([part_bundle.d_f2 for part_bundle in bundles]).reshape(plane_shape)
        d_reduced_t = normalize_backward(tape.norm_t, d_norm_t)
        d_reduced_t1 = normalize_backward(tape.norm_t1, d_norm_t1)

        d_frames_t, d_reduce_t, _ = channel_conv2d_backward(
            d_reduced_t, tape.frames_t, self._reduce_kernel(), NO_PADDING
        )
        d_frames_t1, d_reduce_t1, _ = channel_conv2d_backward(
            d_reduced_t1, tape.frames_t1, self._reduce_kernel(), NO_PADDING
        )

        bundle.d_reduce = (d_reduce_t + d_reduce_t1)[:, :, 0, 0]
        bundle.d_expand = d_expand
        bundle.d_expand_bias = d_expand_bias
        bundle.d_f1 = d_frames_t
        bundle.d_f2 = d_frames_t1
        return bundle


@check_finite
def layer_forward(ft: FeatureMap, ft1: FeatureMap, weights: LayerWeights) -> FeatureMap:
    """
    Apply one representation flow layer to a pair of consecutive feature maps.

    :param ft: Feature map at time ``t`` with ``C`` channels.
    :param ft1: Feature map at time ``t + 1``.
    :param weights: Layer weights for ``C`` channels.

    :return: Feature map of the input's shape.

    """

    if ft.precision is not ft1.precision:
        raise InvalidParameterException("Both feature maps must share one precision")
    output, _ = FlowLayer(weights).forward(ft.data, ft1.data)
    return FeatureMap(output)
