"""
Dense tensor substrate: feature maps, small 2-D kernels, explicit padding, correlation and reductions.

All spatial operators use the correlation convention (no kernel flip): output pixel ``(r, c)`` is
``sum_ij w[i, j] * padded[r + i, c + j]``. Array-level helpers work on the last two axes of arrays with any number of
leading batch axes; the FeatureMap-level operations wrap them for the single-frame API.
"""

import typing as tp

import numpy as np

from dataclasses import dataclass
from enum import Enum
from logging import getLogger

from .constants import EPSILON_STANDARD, EPSILON_WIDE
from .decorators import check_finite
from .exceptions import InvalidParameterException, NonFiniteException, ShapeMismatchException

logger = getLogger(__name__)


class Precision(Enum):
    """
    Real-number widths. ``STANDARD`` is float32 for speed, ``WIDE`` is float64 for oracles and gradient checks.

    """

    STANDARD = "standard"
    WIDE = "wide"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.STANDARD else np.dtype(np.float64)

    @property
    def epsilon(self) -> float:
        return EPSILON_STANDARD if self is Precision.STANDARD else EPSILON_WIDE

    @classmethod
    def of(cls, array: np.ndarray) -> "Precision":
        return cls.STANDARD if array.dtype == np.float32 else cls.WIDE


class PaddingMode(Enum):
    ZERO = "zero"
    REPLICATE = "replicate"


@dataclass(frozen=True)
class PaddingSpec:
    """
    Per-side padding amounts and the fill mode.

    """

    mode: PaddingMode = PaddingMode.ZERO
    left: int = 0
    right: int = 0
    top: int = 0
    bottom: int = 0

    def __post_init__(self):
        if min(self.left, self.right, self.top, self.bottom) < 0:
            raise InvalidParameterException("Padding amounts must be non-negative")

    @classmethod
    def uniform(cls, amount: int, mode: PaddingMode = PaddingMode.ZERO) -> "PaddingSpec":
        """
        Same padding on every side.

        :param amount: Pixels added on each side.
        :param mode: Fill mode.

        :return: Padding spec.

        """

        return cls(mode=mode, left=amount, right=amount, top=amount, bottom=amount)

    @property
    def is_empty(self) -> bool:
        return self.left == self.right == self.top == self.bottom == 0


NO_PADDING = PaddingSpec()
REPLICATE_1 = PaddingSpec.uniform(1, PaddingMode.REPLICATE)


@dataclass(frozen=True)
class Kernel2D:
    """
    Small 2-D kernel. Weights are copied on construction and frozen.

    """

    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise InvalidParameterException(f"Kernel must be a non-empty 2-D matrix, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise NonFiniteException("Kernel weights must be finite")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class FeatureMap:
    """
    Dense ``channels x height x width`` tensor in row-major order. A 2-D array is taken as a single channel.
    float32 data stays float32 (standard precision); anything else is stored as float64 (wide precision).

    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        dtype = np.float32 if data.dtype == np.float32 else np.float64
        data = np.array(data, dtype=dtype)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise ShapeMismatchException(f"FeatureMap needs 2 or 3 dimensions, got {data.ndim}")
        if data.size == 0:
            raise InvalidParameterException("FeatureMap must not be empty")
        if not np.all(np.isfinite(data)):
            raise NonFiniteException("FeatureMap values must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, values: tp.Any, precision: Precision = Precision.WIDE) -> "FeatureMap":
        """
        Build a feature map with an explicit precision.

        :param values: Nested sequence or array of shape ``(H, W)`` or ``(C, H, W)``.
        :param precision: Real-number width of the stored data.

        :return: FeatureMap instance.

        """

        return cls(np.asarray(values, dtype=precision.dtype))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tp.Tuple[int, int, int]:
        return self.data.shape

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data)

    def channel(self, index: int) -> "FeatureMap":
        return FeatureMap(self.data[index])

    def plane(self) -> np.ndarray:
        """
        The single spatial plane of a one-channel map.

        :return: ``(H, W)`` read-only array.

        """

        if self.channels != 1:
            raise ShapeMismatchException(f"Expected a single-channel map, got {self.channels} channels")
        return self.data[0]


def pad(x: np.ndarray, padding: PaddingSpec) -> np.ndarray:
    """
    Pad the last two axes of an array.

    :param x: Array of shape ``(..., H, W)``.
    :param padding: Padding amounts and mode.

    :return: Padded array of shape ``(..., H + top + bottom, W + left + right)``.

    """

    if padding.is_empty:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(padding.top, padding.bottom), (padding.left, padding.right)]
    mode = "constant" if padding.mode is PaddingMode.ZERO else "edge"
    return np.pad(x, widths, mode=mode)


def pad_adjoint(grad: np.ndarray, padding: PaddingSpec) -> np.ndarray:
    """
    Adjoint of :func:`pad`: gradient with respect to the unpadded input. Replicated border pixels accumulate the
    gradients of every copy they produced.

    :param grad: Gradient of the padded array.
    :param padding: The padding used in the forward pass.

    :return: Gradient of shape ``(..., H, W)``.

    """

    if padding.is_empty:
        return grad
    height = grad.shape[-2] - padding.top - padding.bottom
    width = grad.shape[-1] - padding.left - padding.right
    rows = grad[..., padding.top : padding.top + height, :].copy()
    if padding.mode is PaddingMode.REPLICATE:
        if padding.top:
            rows[..., 0, :] += grad[..., : padding.top, :].sum(axis=-2)
        if padding.bottom:
            rows[..., -1, :] += grad[..., padding.top + height :, :].sum(axis=-2)
    out = rows[..., :, padding.left : padding.left + width].copy()
    if padding.mode is PaddingMode.REPLICATE:
        if padding.left:
            out[..., :, 0] += rows[..., :, : padding.left].sum(axis=-1)
        if padding.right:
            out[..., :, -1] += rows[..., :, padding.left + width :].sum(axis=-1)
    return out


def _output_extent(padded_shape: tp.Tuple[int, ...], rows: int, cols: int) -> tp.Tuple[int, int]:
    out_h = padded_shape[-2] - rows + 1
    out_w = padded_shape[-1] - cols + 1
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchException(
            f"Kernel {rows}x{cols} is larger than padded input {padded_shape[-2]}x{padded_shape[-1]}"
        )
    return out_h, out_w


def correlate2d(x: np.ndarray, weights: np.ndarray, padding: PaddingSpec = NO_PADDING) -> np.ndarray:
    """
    Single-kernel correlation over the last two axes. Kernel taps are accumulated in row-major tap order.

    :param x: Array of shape ``(..., H, W)``.
    :param weights: ``(rows, cols)`` kernel.
    :param padding: Padding applied before correlating.

    :return: Array of shape ``(..., H_pad - rows + 1, W_pad - cols + 1)``.

    """

    padded = pad(x, padding)
    weights = np.asarray(weights, dtype=x.dtype)
    rows, cols = weights.shape
    out_h, out_w = _output_extent(padded.shape, rows, cols)
    out = np.zeros(x.shape[:-2] + (out_h, out_w), dtype=x.dtype)
    for i in range(rows):
        for j in range(cols):
            out += weights[i, j] * padded[..., i : i + out_h, j : j + out_w]
    return out


def correlate2d_backward(
    upstream: np.ndarray,
    x: np.ndarray,
    weights: np.ndarray,
    padding: PaddingSpec = NO_PADDING,
    need_weights: bool = True,
) -> tp.Tuple[np.ndarray, tp.Optional[np.ndarray]]:
    """
    Reverse mode of :func:`correlate2d`.

    :param upstream: Gradient of the correlation output.
    :param x: The forward input.
    :param weights: The forward kernel.
    :param padding: The forward padding.
    :param need_weights: Skip the kernel gradient when ``False``.

    :return: ``(d_x, d_weights)``; ``d_weights`` is ``None`` when not requested.

    """

    padded = pad(x, padding)
    weights = np.asarray(weights, dtype=x.dtype)
    rows, cols = weights.shape
    out_h, out_w = upstream.shape[-2:]
    d_padded = np.zeros_like(padded)
    d_weights = np.zeros((rows, cols), dtype=x.dtype) if need_weights else None
    for i in range(rows):
        for j in range(cols):
            d_padded[..., i : i + out_h, j : j + out_w] += weights[i, j] * upstream
            if need_weights:
                d_weights[i, j] = np.sum(upstream * padded[..., i : i + out_h, j : j + out_w])
    return pad_adjoint(d_padded, padding), d_weights


def channel_conv2d(
    x: np.ndarray, weight: np.ndarray, bias: tp.Optional[np.ndarray] = None, padding: PaddingSpec = NO_PADDING
) -> np.ndarray:
    """
    Multi-channel convolution layer (correlation convention).

    :param x: Input of shape ``(..., C_in, H, W)``.
    :param weight: Weights of shape ``(C_out, C_in, rows, cols)``.
    :param bias: Optional ``(C_out,)`` bias.
    :param padding: Spatial padding.

    :return: Output of shape ``(..., C_out, H_out, W_out)``.

    """

    c_out, c_in, rows, cols = weight.shape
    if x.shape[-3] != c_in:
        raise ShapeMismatchException(f"Convolution expects {c_in} input channels, got {x.shape[-3]}")
    padded = pad(x, padding)
    weight = np.asarray(weight, dtype=x.dtype)
    out_h, out_w = _output_extent(padded.shape, rows, cols)
    out = np.zeros(x.shape[:-3] + (c_out, out_h, out_w), dtype=x.dtype)
    for i in range(rows):
        for j in range(cols):
            out += np.einsum("oc,...chw->...ohw", weight[:, :, i, j], padded[..., :, i : i + out_h, j : j + out_w])
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)[:, np.newaxis, np.newaxis]
    return out


def channel_conv2d_backward(
    upstream: np.ndarray, x: np.ndarray, weight: np.ndarray, padding: PaddingSpec = NO_PADDING
) -> tp.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reverse mode of :func:`channel_conv2d`.

    :param upstream: Gradient of the layer output, ``(..., C_out, H_out, W_out)``.
    :param x: The forward input.
    :param weight: The forward weights.
    :param padding: The forward padding.

    :return: ``(d_x, d_weight, d_bias)``.

    """

    padded = pad(x, padding)
    weight = np.asarray(weight, dtype=x.dtype)
    _, _, rows, cols = weight.shape
    out_h, out_w = upstream.shape[-2:]
    d_padded = np.zeros_like(padded)
    d_weight = np.zeros(weight.shape, dtype=x.dtype)
    for i in range(rows):
        for j in range(cols):
            window = padded[..., :, i : i + out_h, j : j + out_w]
            d_padded[..., :, i : i + out_h, j : j + out_w] += np.einsum(
                "oc,...ohw->...chw", weight[:, :, i, j], upstream
            )
            d_weight[:, :, i, j] = np.einsum(
                "nohw,nchw->oc",
                upstream.reshape((-1,) + upstream.shape[-3:]),
                window.reshape((-1,) + window.shape[-3:]),
            )
    d_bias = np.einsum("nohw->o", upstream.reshape((-1,) + upstream.shape[-3:]))
    return pad_adjoint(d_padded, padding), d_weight, d_bias


class ElementwiseOp(Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    SCALE = "scale"
    CLAMP = "clamp"


class ReduceOp(Enum):
    SUM = "sum"
    MEAN = "mean"
    MIN = "min"
    MAX = "max"


class ReduceScope(Enum):
    WHOLE = "whole"
    CHANNEL = "channel"


def guarded_divide(numerator: np.ndarray, denominator: np.ndarray, epsilon: float) -> np.ndarray:
    """
    Division by a non-negative denominator with the epsilon guard: ``numerator / (denominator + epsilon)``.

    """

    return numerator / (denominator + epsilon)


@check_finite
def conv2d(feature_map: FeatureMap, kernel: Kernel2D, padding: PaddingSpec = NO_PADDING) -> FeatureMap:
    """
    Correlate a single-channel feature map with a kernel.

    :param feature_map: Single-channel input.
    :param kernel: Kernel to apply (not flipped).
    :param padding: Padding applied before correlating.

    :return: Single-channel output of size ``padded size - kernel size + 1``.

    """

    return FeatureMap(correlate2d(feature_map.plane(), kernel.weights, padding))


@check_finite
def elementwise(
    op: ElementwiseOp, a: FeatureMap, b: tp.Union[FeatureMap, float, tp.Tuple[float, float]]
) -> FeatureMap:
    """
    Per-element arithmetic. ``b`` is a FeatureMap of the same shape or a scalar; ``SCALE`` takes a scalar and
    ``CLAMP`` a ``(low, high)`` pair. ``DIV`` is the guarded division for non-negative denominators.

    :param op: Operation.
    :param a: Left operand.
    :param b: Right operand.

    :return: Result with the shape of ``a``.

    """

    left = a.data
    if isinstance(b, FeatureMap):
        if b.shape != a.shape:
            raise ShapeMismatchException(f"Elementwise {op.value} on shapes {a.shape} and {b.shape}")
        right = b.data
    elif op is ElementwiseOp.CLAMP:
        low, high = b
        return FeatureMap(np.clip(left, low, high).astype(left.dtype))
    else:
        right = left.dtype.type(b)

    if op is ElementwiseOp.ADD:
        result = left + right
    elif op is ElementwiseOp.SUB:
        result = left - right
    elif op in (ElementwiseOp.MUL, ElementwiseOp.SCALE):
        result = left * right
    elif op is ElementwiseOp.DIV:
        result = guarded_divide(left, right, a.precision.epsilon)
    else:
        raise InvalidParameterException(f"Clamp bounds must be a (low, high) pair, got {b!r}")
    return FeatureMap(result)


def ordered_sum(values: np.ndarray) -> float:
    """
    Left-to-right sum over the row-major order of ``values``. Bitwise reproducible regardless of threading.

    """

    flat = np.ascontiguousarray(values).ravel()
    return float(np.cumsum(flat)[-1])


def reduce(
    op: ReduceOp, feature_map: FeatureMap, scope: ReduceScope = ReduceScope.WHOLE
) -> tp.Union[float, np.ndarray]:
    """
    Sum, mean, min or max over the whole map or per channel.

    :param op: Reduction.
    :param feature_map: Input map (non-empty by construction).
    :param scope: ``WHOLE`` for a scalar, ``CHANNEL`` for a per-channel vector.

    :return: Scalar or ``(C,)`` array.

    """

    def _one(values: np.ndarray) -> float:
        if op is ReduceOp.SUM:
            return ordered_sum(values)
        if op is ReduceOp.MEAN:
            return ordered_sum(values) / values.size
        if op is ReduceOp.MIN:
            return float(np.min(values))
        return float(np.max(values))

    if scope is ReduceScope.WHOLE:
        return _one(feature_map.data)
    return np.array([_one(plane) for plane in feature_map.data], dtype=np.float64)
