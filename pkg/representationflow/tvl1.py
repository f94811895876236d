"""
Classical single-scale TV-L1 solver with fixed kernels and fixed parameters, plus the variational energy. This is
the oracle the learnable layer's forward pass is validated against.
"""

import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .constants import (
    DEFAULT_LAMBDA,
    DEFAULT_TAU,
    DEFAULT_THETA,
    DIVERGENCE_X,
    DIVERGENCE_Y,
    FORWARD_X,
    FORWARD_Y,
    SOBEL_X,
    SOBEL_Y,
)
from .decorators import check_finite
from .exceptions import InvalidParameterException, ShapeMismatchException
from .tensorcore import (
    FeatureMap,
    PaddingMode,
    PaddingSpec,
    REPLICATE_1,
    correlate2d,
    correlate2d_backward,
    ordered_sum,
)

logger = getLogger(__name__)

PAD_FIRST_COLUMN = PaddingSpec(mode=PaddingMode.ZERO, left=1)
PAD_FIRST_ROW = PaddingSpec(mode=PaddingMode.ZERO, top=1)
PAD_LAST_COLUMN = PaddingSpec(mode=PaddingMode.REPLICATE, right=1)
PAD_LAST_ROW = PaddingSpec(mode=PaddingMode.REPLICATE, bottom=1)


@dataclass(frozen=True)
class FlowField:
    """
    Per-pixel displacement ``u = (u_x, u_y)``; both components are single-channel maps of the input size.

    """

    u_x: FeatureMap
    u_y: FeatureMap

    def __post_init__(self):
        if self.u_x.shape != self.u_y.shape or self.u_x.channels != 1:
            raise ShapeMismatchException(f"Flow components disagree: {self.u_x.shape} vs {self.u_y.shape}")

    @classmethod
    def from_arrays(cls, u_x: np.ndarray, u_y: np.ndarray) -> "FlowField":
        return cls(FeatureMap(u_x), FeatureMap(u_y))

    def stack(self) -> np.ndarray:
        """
        :return: ``(2, H, W)`` array holding ``u_x`` then ``u_y``.

        """

        return np.stack([self.u_x.plane(), self.u_y.plane()])

    def finite_arrays(self) -> tp.List[np.ndarray]:
        return [self.u_x.data, self.u_y.data]


@dataclass(frozen=True)
class DualField:
    """
    Dual state. ``p_x`` holds the two directional channels dual to ``grad u_x``, ``p_y`` those dual to ``grad u_y``.

    """

    p_x: FeatureMap
    p_y: FeatureMap

    def finite_arrays(self) -> tp.List[np.ndarray]:
        return [self.p_x.data, self.p_y.data]


@dataclass(frozen=True)
class TvParams:
    """
    Fixed solver hyperparameters; the defaults suit inputs scaled to ``[0, 255]``.

    """

    tau: float = DEFAULT_TAU
    lam: float = DEFAULT_LAMBDA
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        for name in ("tau", "lam", "theta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterException(f"{name} must be strictly positive, got {value}")


def flow_gradient(u: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
    """
    Forward differences of a flow component along x and y over the last two axes, zero on the last column and row.
    On duals whose last column and row stay zero this is the negative adjoint of the initial divergence.

    :param u: Array of shape ``(..., H, W)``.

    :return: ``(d/dx u, d/dy u)``.

    """

    kernel_x = np.asarray(FORWARD_X, dtype=u.dtype)
    kernel_y = np.asarray(FORWARD_Y, dtype=u.dtype)
    return correlate2d(u, kernel_x, PAD_LAST_COLUMN), correlate2d(u, kernel_y, PAD_LAST_ROW)


def flow_gradient_backward(d_grad_x: np.ndarray, d_grad_y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Reverse mode of :func:`flow_gradient`.

    :param d_grad_x: Gradient of the x difference.
    :param d_grad_y: Gradient of the y difference.
    :param u: The forward input.

    :return: Gradient with respect to ``u``.

    """

    kernel_x = np.asarray(FORWARD_X, dtype=u.dtype)
    kernel_y = np.asarray(FORWARD_Y, dtype=u.dtype)
    d_x, _ = correlate2d_backward(d_grad_x, u, kernel_x, PAD_LAST_COLUMN, need_weights=False)
    d_y, _ = correlate2d_backward(d_grad_y, u, kernel_y, PAD_LAST_ROW, need_weights=False)
    return d_x + d_y


def _check_pair(f1: FeatureMap, f2: FeatureMap) -> None:
    if f1.shape != f2.shape:
        raise ShapeMismatchException(f"Frame shapes differ: {f1.shape} vs {f2.shape}")
    if f1.channels != 1:
        raise ShapeMismatchException(f"Flow is computed on single-channel maps, got {f1.channels} channels")
    if f1.precision is not f2.precision:
        raise InvalidParameterException("Both frames must share one precision")


@check_finite
def tvl1_solve(
    f1: FeatureMap, f2: FeatureMap, params: TvParams = TvParams(), iterations: int = 100
) -> tp.Tuple[FlowField, DualField]:
    """
    Run the single-scale TV-L1 primal-dual iteration from ``u = 0, p = 0``. No warping, no pyramid. Frame gradients
    use the Sobel pair, flow gradients use :func:`flow_gradient`.

    :param f1: First frame, single channel.
    :param f2: Second frame, same shape and precision.
    :param params: Fixed ``tau``, ``lambda``, ``theta``.
    :param iterations: Number of update rounds, at least 1.

    :return: Final flow and dual state.

    """

    _check_pair(f1, f2)
    if iterations < 1:
        raise InvalidParameterException(f"iterations must be >= 1, got {iterations}")

    logger.info(f"Solving TV-L1 on {f1.height}x{f1.width} for {iterations} iterations")

    frame1, frame2 = f1.plane(), f2.plane()
    epsilon = f1.precision.epsilon
    sobel_x = np.asarray(SOBEL_X, dtype=frame1.dtype)
    sobel_y = np.asarray(SOBEL_Y, dtype=frame1.dtype)
    div_x = np.asarray(DIVERGENCE_X, dtype=frame1.dtype)
    div_y = np.asarray(DIVERGENCE_Y, dtype=frame1.dtype)

    grad_x = correlate2d(frame2, sobel_x, REPLICATE_1)
    grad_y = correlate2d(frame2, sobel_y, REPLICATE_1)
    grad_sq = grad_x * grad_x + grad_y * grad_y
    rho_c = frame2 - frame1
    l_t = params.lam * params.theta
    taut = params.tau / params.theta
    threshold = l_t * grad_sq
    denom = grad_sq + epsilon
    flat = int(np.count_nonzero(grad_sq <= epsilon))
    if flat:
        logger.warning(f"{flat} of {grad_sq.size} pixels have a flat image gradient")

    u_x = np.zeros_like(frame1)
    u_y = np.zeros_like(frame1)
    p_xx, p_xy, p_yx, p_yy = (np.zeros_like(frame1) for _ in range(4))

    for _ in range(iterations):
        rho = rho_c + grad_x * u_x + grad_y * u_y
        v_x = np.where(
            rho < -threshold,
            u_x + l_t * grad_x,
            np.where(rho > threshold, u_x - l_t * grad_x, u_x - rho * grad_x / denom),
        )
        v_y = np.where(
            rho < -threshold,
            u_y + l_t * grad_y,
            np.where(rho > threshold, u_y - l_t * grad_y, u_y - rho * grad_y / denom),
        )

        u_x = v_x + params.theta * (
            correlate2d(p_xx, div_x, PAD_FIRST_COLUMN) + correlate2d(p_xy, div_y, PAD_FIRST_ROW)
        )
        u_y = v_y + params.theta * (
            correlate2d(p_yx, div_x, PAD_FIRST_COLUMN) + correlate2d(p_yy, div_y, PAD_FIRST_ROW)
        )

        ux_gx, ux_gy = flow_gradient(u_x)
        uy_gx, uy_gy = flow_gradient(u_y)
        norm_x = 1.0 + taut * np.sqrt(ux_gx * ux_gx + ux_gy * ux_gy)
        norm_y = 1.0 + taut * np.sqrt(uy_gx * uy_gx + uy_gy * uy_gy)
        p_xx = (p_xx + taut * ux_gx) / norm_x
        p_xy = (p_xy + taut * ux_gy) / norm_x
        p_yx = (p_yx + taut * uy_gx) / norm_y
        p_yy = (p_yy + taut * uy_gy) / norm_y

    flow = FlowField.from_arrays(u_x, u_y)
    dual = DualField(FeatureMap(np.stack([p_xx, p_xy])), FeatureMap(np.stack([p_yx, p_yy])))
    return flow, dual


def tvl1_flow(f1: FeatureMap, f2: FeatureMap, params: TvParams = TvParams(), iterations: int = 100) -> FlowField:
    """
    Flow of the reference solver. See :func:`tvl1_solve`.

    :param f1: First frame, single channel.
    :param f2: Second frame.
    :param params: Fixed hyperparameters.
    :param iterations: Number of update rounds.

    :return: Flow field.

    """

    return tvl1_solve(f1, f2, params, iterations)[0]


@check_finite
def tv_energy(u: FlowField, f1: FeatureMap, f2: FeatureMap, lam: float = DEFAULT_LAMBDA) -> float:
    """
    Total variational energy ``sum |grad u| + lambda * sum |grad F2 . u + F2 - F1|``, the objective the solver
    linearizes. ``|grad u|`` is the per-pixel Euclidean norm over the four forward-difference channels of ``u``
    (:func:`flow_gradient`) and ``grad F2`` uses the Sobel pair.

    :param u: Flow field.
    :param f1: First frame.
    :param f2: Second frame.
    :param lam: Data-term weight, strictly positive.

    :return: Energy value.

    """

    _check_pair(f1, f2)
    if u.u_x.shape != f1.shape:
        raise ShapeMismatchException(f"Flow shape {u.u_x.shape} does not match frames {f1.shape}")
    if lam <= 0:
        raise InvalidParameterException(f"lambda must be strictly positive, got {lam}")

    frame1, frame2 = f1.plane(), f2.plane()
    u_x, u_y = u.u_x.plane().astype(frame1.dtype), u.u_y.plane().astype(frame1.dtype)
    sobel_x = np.asarray(SOBEL_X, dtype=frame1.dtype)
    sobel_y = np.asarray(SOBEL_Y, dtype=frame1.dtype)

    gradients = [*flow_gradient(u_x), *flow_gradient(u_y)]
    tv_term = np.sqrt(sum(g * g for g in gradients))

    residual = correlate2d(frame2, sobel_x, REPLICATE_1) * u_x + correlate2d(frame2, sobel_y, REPLICATE_1) * u_y
    residual = residual + frame2 - frame1

    return ordered_sum(tv_term) + lam * ordered_sum(np.abs(residual))


def interior(array: np.ndarray, border: int) -> np.ndarray:
    """
    Crop ``border`` pixels from each side of the last two axes.

    :param array: Array of shape ``(..., H, W)``.
    :param border: Pixels dropped on each side, non-negative and leaving at least one pixel.

    :return: View of shape ``(..., H - 2 * border, W - 2 * border)``.

    """

    if border < 0 or 2 * border >= min(array.shape[-2:]):
        raise InvalidParameterException(f"Border {border} leaves no interior in a {array.shape[-2:]} map")
    if border == 0:
        return array
    return array[..., border:-border, border:-border]


def endpoint_error(u: FlowField, reference: FlowField, border: int = 0) -> float:
    """
    Mean Euclidean distance between two flow fields, optionally over the interior only.

    :param u: Estimated flow.
    :param reference: Reference flow.
    :param border: Pixels excluded on each side.

    :return: Mean endpoint error.

    """

    if u.u_x.shape != reference.u_x.shape:
        raise ShapeMismatchException(f"Flow shapes differ: {u.u_x.shape} vs {reference.u_x.shape}")
    diff = interior(u.stack().astype(np.float64) - reference.stack().astype(np.float64), border)
    return float(np.mean(np.sqrt(diff[0] * diff[0] + diff[1] * diff[1])))
