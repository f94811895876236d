import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .flow_conv_flow import FlowConvFlow
from .flow_layer import FlowLayer, LayerWeights
from .flow_params import FlowParams, LearnFlags
from ..exceptions import GradientCheckException
from ..repflow import FlowKernels, unroll_backward, unroll_forward
from ..types import ArrayDict, ReportRow
from ..utils import relative_error, smooth_texture

logger = getLogger(__name__)

FD_STEP = 1e-6
TOLERANCE = 1e-4
MAX_ENTRIES = 24

Objective = tp.Callable[[], tp.Tuple[float, ArrayDict]]


@dataclass
class LeafReport:
    leaf: str
    max_relative_error: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error < TOLERANCE

    def row(self) -> ReportRow:
        return {
            "leaf": self.leaf,
            "max_relative_error": self.max_relative_error,
            "checked": self.checked,
            "status": "pass" if self.passed else "fail",
        }


class GradientChecker:
    """
    Compare reverse-mode gradients with central finite differences. The objective reads the leaves from ``leaves`` by
    reference, so perturbing an entry in place and re-evaluating gives the numerical derivative.
    """

    def __init__(
        self,
        objective: Objective,
        leaves: ArrayDict,
        step: float = FD_STEP,
        max_entries: int = MAX_ENTRIES,
        seed: int = 0,
    ) -> None:
        """
        :param objective: Returns the scalar loss and the analytic gradient per leaf name.
        :param leaves: Float64 arrays the objective reads, keyed like its gradients.
        :param step: Finite-difference step.
        :param max_entries: Entries sampled per leaf; smaller leaves are checked exhaustively.
        :param seed: Sampling seed.

        """

        self.objective: Objective = objective
        self.leaves: ArrayDict = leaves
        self.step: float = step
        self.max_entries: int = max_entries
        self.rng: np.random.Generator = np.random.default_rng(seed)

    def _entries(self, size: int) -> np.ndarray:
        if size <= self.max_entries:
            return np.arange(size)
        return np.sort(self.rng.choice(size, self.max_entries, replace=False))

    def numeric(self, name: str, index: int) -> float:
        leaf = self.leaves[name].reshape(-1)
        original = leaf[index]
        leaf[index] = original + self.step
        plus, _ = self.objective()
        leaf[index] = original - self.step
        minus, _ = self.objective()
        leaf[index] = original
        return (plus - minus) / (2.0 * self.step)

    def run(self) -> tp.List[LeafReport]:
        """
        :return: One report per leaf, in leaf order.

        """

        _, analytic = self.objective()
        reports = []
        for name, leaf in self.leaves.items():
            flat_analytic = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
            entries = self._entries(leaf.size)
            numeric = np.array([self.numeric(name, int(index)) for index in entries])
            errors = relative_error(flat_analytic[entries], numeric)
            reports.append(LeafReport(name, float(errors.max()), len(entries)))
            logger.info(f"Gradient check {name}: max relative error {reports[-1].max_relative_error:.3e}")
        return reports

    def check(self) -> tp.List[LeafReport]:
        """
        Like :meth:`run` but raise when any leaf fails.

        """

        reports = self.run()
        failing = [report.leaf for report in reports if not report.passed]
        if failing:
            raise GradientCheckException(f"Gradient check failed for {', '.join(failing)}", failing)
        return reports


def flow_checker(
    iterations: int,
    size: int = 16,
    seed: int = 0,
    learn_flags: LearnFlags = LearnFlags.preset("all"),
    include_frames: bool = False,
) -> GradientChecker:
    """
    Gradient check of the bare unrolled flow on a random ``size x size`` pair under the loss
    ``sum(c_x * u_x + c_y * u_y)`` with random weights ``c``. Scalars are checked in their plain (not logarithmic)
    parametrization; leaves are named ``d_tau``, ``d_lambda``, ``d_theta``, ``d_wx``, ``d_wy``, ``d_sobel_x``,
    ``d_sobel_y`` (and ``d_f1``, ``d_f2`` with ``include_frames``).

    """

    rng = np.random.default_rng(seed)
    defaults = FlowParams()
    f1 = smooth_texture(size, seed) + rng.normal(0.0, 4.0, (size, size))
    f2 = np.roll(f1, (0, 1), axis=(0, 1)) + rng.normal(0.0, 2.0, (size, size))
    weights_x = rng.normal(size=(size, size))
    weights_y = rng.normal(size=(size, size))

    values: ArrayDict = {
        "d_tau": np.array(defaults.tau),
        "d_lambda": np.array(defaults.lam),
        "d_theta": np.array(defaults.theta),
        "d_wx": defaults.w_x.copy(),
        "d_wy": defaults.w_y.copy(),
        "d_sobel_x": defaults.sobel_x.copy(),
        "d_sobel_y": defaults.sobel_y.copy(),
        "d_f1": f1,
        "d_f2": f2,
    }

    def objective() -> tp.Tuple[float, ArrayDict]:
        kernels = FlowKernels(values["d_sobel_x"], values["d_sobel_y"], values["d_wx"], values["d_wy"])
        u_x, u_y, tape = unroll_forward(
            values["d_f1"],
            values["d_f2"],
            float(values["d_tau"]),
            float(values["d_lambda"]),
            float(values["d_theta"]),
            kernels,
            iterations,
        )
        loss = float(np.sum(weights_x * u_x + weights_y * u_y))
        bundle = unroll_backward(tape, weights_x, weights_y)
        return loss, {name: np.asarray(value) for name, value in bundle.leaves().items()}

    groups = []
    if learn_flags.scalars:
        groups += ["d_tau", "d_lambda", "d_theta"]
    if learn_flags.divergence:
        groups += ["d_wx", "d_wy"]
    if learn_flags.sobel:
        groups += ["d_sobel_x", "d_sobel_y"]
    if include_frames:
        groups += ["d_f1", "d_f2"]
    return GradientChecker(objective, {name: values[name] for name in groups}, seed=seed)


def layer_checker(
    iterations: int, channels: int = 2, c_prime: int = 2, size: int = 12, seed: int = 0
) -> GradientChecker:
    """
    Gradient check of a full flow layer (reduce, normalize, flow, expand) on every parameter, including the
    logarithmic flow scalars, under a random linear loss of its output.

    """

    rng = np.random.default_rng(seed)
    weights = LayerWeights(channels, c_prime, iterations, FlowParams(learn_flags=LearnFlags.preset("all")), seed=seed)
    layer = FlowLayer(weights)
    base = np.stack([smooth_texture(size, seed + channel) for channel in range(channels)]) / 255.0
    frames_t = base + rng.normal(0.0, 0.05, base.shape)
    frames_t1 = np.roll(base, 1, axis=-1) + rng.normal(0.0, 0.05, base.shape)
    upstream = rng.normal(size=base.shape)

    def objective() -> tp.Tuple[float, ArrayDict]:
        output, tape = layer.forward(frames_t, frames_t1)
        bundle = layer.backward(tape, upstream)
        return float(np.sum(upstream * output)), weights.gradients_from(bundle)

    return GradientChecker(objective, weights.named_parameters(), seed=seed)


def fcf_checker(
    iterations: int, channels: int = 2, c_prime: int = 2, size: int = 10, with_mid: bool = True, seed: int = 0
) -> GradientChecker:
    """
    Gradient check of flow-conv-flow (or flow-of-flow) on every parameter, including the mid convolution.

    """

    rng = np.random.default_rng(seed)
    stack = FlowConvFlow.create(channels, c_prime, iterations, with_mid=with_mid, seed=seed)
    for weights in (stack.weights_a, stack.weights_b):
        weights.flow_params.learn_flags = LearnFlags.preset("all")
    base = np.stack([smooth_texture(size, seed + channel) for channel in range(channels)]) / 255.0
    frames = [np.roll(base, t, axis=-1) + rng.normal(0.0, 0.05, base.shape) for t in range(3)]
    upstream = rng.normal(size=base.shape)

    def objective() -> tp.Tuple[float, ArrayDict]:
        output, tape = stack.forward(*frames)
        grads = stack.backward(tape, upstream)
        return float(np.sum(upstream * output)), grads.parameters

    return GradientChecker(objective, stack.named_parameters(), seed=seed)
