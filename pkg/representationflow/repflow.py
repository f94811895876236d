"""
The representation flow iteration as an unrolled, differentiable computation.

The forward pass repeats the TV-L1 update sequence for a fixed number of rounds and records the per-round primal and
dual state plus the data-term branch masks. The backward pass walks the record in reverse and returns exact gradients
of the unrolled graph with respect to both frames and every flow parameter. The three-way data-term split is
differentiated with the branch chosen in the forward pass held fixed. The learnable Sobel pair differentiates the second
frame only; the flow itself is differentiated with the fixed forward differences of :func:`flow_gradient`.

The array-level functions accept arrays of shape ``(..., H, W)``: every leading index is an independent frame pair
sharing one parameter set, which is how the layer runs all channels of a batch at once.
"""

import typing as tp

import numpy as np

from dataclasses import dataclass, field
from logging import getLogger

from .decorators import check_finite
from .exceptions import InvalidParameterException, ShapeMismatchException, TapeMismatchException
from .tensorcore import FeatureMap, Precision, REPLICATE_1, correlate2d, correlate2d_backward
from .tvl1 import PAD_FIRST_COLUMN, PAD_FIRST_ROW, FlowField, flow_gradient, flow_gradient_backward

if tp.TYPE_CHECKING:
    from .classes.flow_params import FlowParams

logger = getLogger(__name__)


@dataclass
class IterationState:
    """
    Primal and dual state after one round. ``p_xx, p_xy`` are dual to ``grad u_x``; ``p_yx, p_yy`` to ``grad u_y``.

    """

    u_x: np.ndarray
    u_y: np.ndarray
    p_xx: np.ndarray
    p_xy: np.ndarray
    p_yx: np.ndarray
    p_yy: np.ndarray

    @classmethod
    def zeros(cls, shape: tp.Tuple[int, ...], dtype: np.dtype) -> "IterationState":
        return cls(*(np.zeros(shape, dtype=dtype) for _ in range(6)))


@dataclass
class FlowKernels:
    sobel_x: np.ndarray
    sobel_y: np.ndarray
    w_x: np.ndarray
    w_y: np.ndarray


@dataclass
class FlowTape:
    """
    Everything the reverse pass needs: inputs, scalars, kernels, the constant data-term arrays, the state before and
    after every round (``states[0]`` is the zero state) and the branch masks of every round.

    """

    f1: np.ndarray
    f2: np.ndarray
    tau: float
    lam: float
    theta: float
    kernels: FlowKernels
    epsilon: float
    grad_x: np.ndarray
    grad_y: np.ndarray
    rho_c: np.ndarray
    denom: np.ndarray
    states: tp.List[IterationState] = field(default_factory=list)
    masks: tp.List[tp.Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.masks)

    @property
    def shape(self) -> tp.Tuple[int, ...]:
        return self.f1.shape


@dataclass
class GradientBundle:
    """
    Gradients of a scalar loss with respect to every learnable leaf and the two input frames. Layer-level leaves
    (``d_reduce``, ``d_expand``, ``d_expand_bias``) are ``None`` for a bare flow call.

    """

    d_tau: float = 0.0
    d_lambda: float = 0.0
    d_theta: float = 0.0
    d_wx: tp.Optional[np.ndarray] = None
    d_wy: tp.Optional[np.ndarray] = None
    d_sobel_x: tp.Optional[np.ndarray] = None
    d_sobel_y: tp.Optional[np.ndarray] = None
    d_reduce: tp.Optional[np.ndarray] = None
    d_expand: tp.Optional[np.ndarray] = None
    d_expand_bias: tp.Optional[np.ndarray] = None
    d_f1: tp.Optional[np.ndarray] = None
    d_f2: tp.Optional[np.ndarray] = None

    def leaves(self) -> tp.Dict[str, tp.Union[float, np.ndarray]]:
        """
        :return: Every populated gradient keyed by its field name.

        """

        return {name: value for name, value in self.__dict__.items() if value is not None}

    def finite_arrays(self) -> tp.List[np.ndarray]:
        return [np.asarray(value) for value in self.leaves().values()]


def _p_update_adjoint(
    u: np.ndarray,
    p_a_new: np.ndarray,
    p_b_new: np.ndarray,
    d_p_a: np.ndarray,
    d_p_b: np.ndarray,
    taut: float,
    u_bar: np.ndarray,
    accum: tp.Dict[str, tp.Any],
) -> tp.Tuple[np.ndarray, np.ndarray]:
    """
    Reverse the dual update ``p <- (p + taut * grad u) / (1 + taut * |grad u|)`` for one flow component. Adds into
    ``u_bar`` and ``accum`` and returns the adjoints of the previous dual pair.

    """

    grad_a, grad_b = flow_gradient(u)
    magnitude = np.sqrt(grad_a * grad_a + grad_b * grad_b)
    norm = 1.0 + taut * magnitude

    d_p_a_prev = d_p_a / norm
    d_p_b_prev = d_p_b / norm
    d_grad_a = d_p_a * taut / norm
    d_grad_b = d_p_b * taut / norm
    accum["taut"] += np.sum((d_p_a * grad_a + d_p_b * grad_b) / norm)

    d_norm = -(d_p_a * p_a_new + d_p_b * p_b_new) / norm
    accum["taut"] += np.sum(d_norm * magnitude)
    d_magnitude = d_norm * taut
    # |grad u| = 0 takes the zero subgradient.
    nonzero = magnitude > 0
    scale = np.where(nonzero, d_magnitude / np.where(nonzero, magnitude, 1.0), 0.0)
    d_grad_a = d_grad_a + scale * grad_a
    d_grad_b = d_grad_b + scale * grad_b

    u_bar += flow_gradient_backward(d_grad_a, d_grad_b, u)
    return d_p_a_prev, d_p_b_prev


def unroll_forward(
    f1: np.ndarray,
    f2: np.ndarray,
    tau: float,
    lam: float,
    theta: float,
    kernels: FlowKernels,
    iterations: int,
) -> tp.Tuple[np.ndarray, np.ndarray, FlowTape]:
    """
    Run the unrolled iteration on arrays and record a tape.

    :param f1: First frames, ``(..., H, W)``.
    :param f2: Second frames, same shape and dtype.
    :param tau: Time step.
    :param lam: Data-term weight.
    :param theta: Coupling weight.
    :param kernels: Sobel and divergence kernels, cast to the frame dtype.
    :param iterations: Number of rounds, at least 1.

    :return: ``(u_x, u_y, tape)``.

    """

    if f1.shape != f2.shape:
        raise ShapeMismatchException(f"Frame shapes differ: {f1.shape} vs {f2.shape}")
    if iterations < 1:
        raise InvalidParameterException(f"iterations must be >= 1, got {iterations}")
    if theta <= 0:
        raise InvalidParameterException(f"theta must be strictly positive, got {theta}")

    epsilon = Precision.of(f1).epsilon
    kernels = FlowKernels(
        *(np.asarray(k, dtype=f1.dtype) for k in (kernels.sobel_x, kernels.sobel_y, kernels.w_x, kernels.w_y))
    )

    grad_x = correlate2d(f2, kernels.sobel_x, REPLICATE_1)
    grad_y = correlate2d(f2, kernels.sobel_y, REPLICATE_1)
    grad_sq = grad_x * grad_x + grad_y * grad_y
    rho_c = f2 - f1
    l_t = lam * theta
    taut = tau / theta
    threshold = l_t * grad_sq
    denom = grad_sq + epsilon

    tape = FlowTape(f1, f2, tau, lam, theta, kernels, epsilon, grad_x, grad_y, rho_c, denom)
    state = IterationState.zeros(f1.shape, f1.dtype)
    tape.states.append(state)

    for iteration in range(iterations):
        rho = rho_c + grad_x * state.u_x + grad_y * state.u_y
        low = rho < -threshold
        high = rho > threshold
        v_x = np.where(
            low,
            state.u_x + l_t * grad_x,
            np.where(high, state.u_x - l_t * grad_x, state.u_x - rho * grad_x / denom),
        )
        v_y = np.where(
            low,
            state.u_y + l_t * grad_y,
            np.where(high, state.u_y - l_t * grad_y, state.u_y - rho * grad_y / denom),
        )

        div_x = correlate2d(state.p_xx, kernels.w_x, PAD_FIRST_COLUMN) + correlate2d(
            state.p_xy, kernels.w_y, PAD_FIRST_ROW
        )
        div_y = correlate2d(state.p_yx, kernels.w_x, PAD_FIRST_COLUMN) + correlate2d(
            state.p_yy, kernels.w_y, PAD_FIRST_ROW
        )
        u_x = v_x + theta * div_x
        u_y = v_y + theta * div_y

        ux_gx, ux_gy = flow_gradient(u_x)
        uy_gx, uy_gy = flow_gradient(u_y)
        norm_x = 1.0 + taut * np.sqrt(ux_gx * ux_gx + ux_gy * ux_gy)
        norm_y = 1.0 + taut * np.sqrt(uy_gx * uy_gx + uy_gy * uy_gy)

        state = IterationState(
            u_x=u_x,
            u_y=u_y,
            p_xx=(state.p_xx + taut * ux_gx) / norm_x,
            p_xy=(state.p_xy + taut * ux_gy) / norm_x,
            p_yx=(state.p_yx + taut * uy_gx) / norm_y,
            p_yy=(state.p_yy + taut * uy_gy) / norm_y,
        )
        tape.states.append(state)
        tape.masks.append((low, high))
        logger.debug(f"Round {iteration}: {int(low.sum())} low, {int(high.sum())} high, {low.size} pixels")

    return state.u_x, state.u_y, tape


def unroll_backward(tape: FlowTape, d_u_x: np.ndarray, d_u_y: np.ndarray) -> GradientBundle:
    """
    Reverse pass of :func:`unroll_forward`.

    :param tape: Tape of the forward call.
    :param d_u_x: Gradient of the loss with respect to the returned ``u_x``.
    :param d_u_y: Gradient of the loss with respect to the returned ``u_y``.

    :return: GradientBundle with scalar, kernel and frame gradients (frame gradients shaped like the frames).

    """

    if d_u_x.shape != tape.shape or d_u_y.shape != tape.shape:
        raise TapeMismatchException(f"Upstream gradient shape {d_u_x.shape} does not match tape shape {tape.shape}")

    dtype = tape.f1.dtype
    kernels = tape.kernels
    tau, lam, theta = tape.tau, tape.lam, tape.theta
    l_t = lam * theta
    taut = tau / theta
    grad_x, grad_y, denom = tape.grad_x, tape.grad_y, tape.denom

    accum: tp.Dict[str, tp.Any] = {"taut": 0.0}
    d_l_t = 0.0
    d_theta = 0.0
    d_w_x = np.zeros_like(kernels.w_x)
    d_w_y = np.zeros_like(kernels.w_y)
    d_grad_x = np.zeros_like(grad_x)
    d_grad_y = np.zeros_like(grad_y)
    d_denom = np.zeros_like(denom)
    d_rho_c = np.zeros_like(tape.rho_c)

    u_x_bar = np.array(d_u_x, dtype=dtype)
    u_y_bar = np.array(d_u_y, dtype=dtype)
    d_p_xx, d_p_xy, d_p_yx, d_p_yy = (np.zeros(tape.shape, dtype=dtype) for _ in range(4))

    for k in reversed(range(tape.iterations)):
        prev, new = tape.states[k], tape.states[k + 1]
        low, high = tape.masks[k]

        d_p_xx, d_p_xy = _p_update_adjoint(
            new.u_x, new.p_xx, new.p_xy, d_p_xx, d_p_xy, taut, u_x_bar, accum
        )
        d_p_yx, d_p_yy = _p_update_adjoint(
            new.u_y, new.p_yx, new.p_yy, d_p_yx, d_p_yy, taut, u_y_bar, accum
        )

        div_x = correlate2d(prev.p_xx, kernels.w_x, PAD_FIRST_COLUMN) + correlate2d(
            prev.p_xy, kernels.w_y, PAD_FIRST_ROW
        )
        div_y = correlate2d(prev.p_yx, kernels.w_x, PAD_FIRST_COLUMN) + correlate2d(
            prev.p_yy, kernels.w_y, PAD_FIRST_ROW
        )
        d_theta += np.sum(u_x_bar * div_x + u_y_bar * div_y)
        d_div_x = theta * u_x_bar
        d_div_y = theta * u_y_bar
        d_a, d_wx_part = correlate2d_backward(d_div_x, prev.p_xx, kernels.w_x, PAD_FIRST_COLUMN)
        d_b, d_wy_part = correlate2d_backward(d_div_x, prev.p_xy, kernels.w_y, PAD_FIRST_ROW)
        d_p_xx, d_p_xy = d_p_xx + d_a, d_p_xy + d_b
        d_w_x += d_wx_part
        d_w_y += d_wy_part
        d_a, d_wx_part = correlate2d_backward(d_div_y, prev.p_yx, kernels.w_x, PAD_FIRST_COLUMN)
        d_b, d_wy_part = correlate2d_backward(d_div_y, prev.p_yy, kernels.w_y, PAD_FIRST_ROW)
        d_p_yx, d_p_yy = d_p_yx + d_a, d_p_yy + d_b
        d_w_x += d_wx_part
        d_w_y += d_wy_part

        d_v_x, d_v_y = u_x_bar, u_y_bar
        rho = tape.rho_c + grad_x * prev.u_x + grad_y * prev.u_y
        middle = ~(low | high)
        sign = np.where(low, 1.0, np.where(high, -1.0, 0.0)).astype(dtype)
        dv_dot_g = d_v_x * grad_x + d_v_y * grad_y

        d_l_t += np.sum(sign * dv_dot_g)
        d_grad_x += sign * l_t * d_v_x
        d_grad_y += sign * l_t * d_v_y
        d_rho = np.where(middle, -dv_dot_g / denom, 0.0)
        d_grad_x += np.where(middle, -d_v_x * rho / denom, 0.0)
        d_grad_y += np.where(middle, -d_v_y * rho / denom, 0.0)
        d_denom += np.where(middle, rho * dv_dot_g / (denom * denom), 0.0)

        d_rho_c += d_rho
        d_grad_x += d_rho * prev.u_x
        d_grad_y += d_rho * prev.u_y
        u_x_bar = d_v_x + d_rho * grad_x
        u_y_bar = d_v_y + d_rho * grad_y

    # denom = |grad F2|^2 + eps
    d_grad_x += 2.0 * grad_x * d_denom
    d_grad_y += 2.0 * grad_y * d_denom
    d_f2_x, d_sobel_x = correlate2d_backward(d_grad_x, tape.f2, kernels.sobel_x, REPLICATE_1)
    d_f2_y, d_sobel_y = correlate2d_backward(d_grad_y, tape.f2, kernels.sobel_y, REPLICATE_1)

    d_taut = float(accum["taut"])
    d_l_t = float(d_l_t)
    return GradientBundle(
        d_tau=d_taut / theta,
        d_lambda=d_l_t * theta,
        d_theta=float(d_theta) + d_l_t * lam - d_taut * tau / (theta * theta),
        d_wx=d_w_x,
        d_wy=d_w_y,
        d_sobel_x=d_sobel_x,
        d_sobel_y=d_sobel_y,
        d_f1=-d_rho_c,
        d_f2=d_rho_c + d_f2_x + d_f2_y,
    )


def flow_kernels(params: "FlowParams") -> FlowKernels:
    return FlowKernels(params.sobel_x, params.sobel_y, params.w_x, params.w_y)


@check_finite
def rep_flow_forward(
    f1: FeatureMap, f2: FeatureMap, params: "FlowParams", iterations: int
) -> tp.Tuple[FlowField, FlowTape]:
    """
    Forward pass of the representation flow layer on one channel pair.

    :param f1: First frame, single channel.
    :param f2: Second frame, same shape and precision.
    :param params: Flow parameters.
    :param iterations: Number of unrolled rounds.

    :return: Flow field and the tape for :func:`rep_flow_backward`.

    """

    if f1.shape != f2.shape:
        raise ShapeMismatchException(f"Frame shapes differ: {f1.shape} vs {f2.shape}")
    if f1.precision is not f2.precision:
        raise InvalidParameterException("Both frames must share one precision")

    logger.info(
        f"Representation flow on {f1.height}x{f1.width}, {iterations} iterations, "
        f"tau={params.tau:.4g} lambda={params.lam:.4g} theta={params.theta:.4g}"
    )
    u_x, u_y, tape = unroll_forward(
        f1.plane(), f2.plane(), params.tau, params.lam, params.theta, flow_kernels(params), iterations
    )
    return FlowField.from_arrays(u_x, u_y), tape


@check_finite
def rep_flow_backward(tape: FlowTape, upstream: FlowField) -> GradientBundle:
    """
    Reverse pass for :func:`rep_flow_forward`.

    :param tape: Tape returned by the forward call.
    :param upstream: Gradient of the loss with respect to the flow, shaped like the flow.

    :return: GradientBundle; ``d_f1``/``d_f2`` have the ``(1, H, W)`` shape of the input maps.

    """

    if upstream.u_x.shape[1:] != tape.shape:
        raise TapeMismatchException(f"Upstream flow shape {upstream.u_x.shape} does not match tape {tape.shape}")

    bundle = unroll_backward(
        tape, upstream.u_x.plane().astype(tape.f1.dtype), upstream.u_y.plane().astype(tape.f1.dtype)
    )
    bundle.d_f1 = bundle.d_f1[np.newaxis]
    bundle.d_f2 = bundle.d_f2[np.newaxis]
    logger.info(f"Backward through {tape.iterations} rounds: d_tau={bundle.d_tau:.4g} d_theta={bundle.d_theta:.4g}")
    return bundle
