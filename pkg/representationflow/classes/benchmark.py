import time
import typing as tp

import numpy as np

from dataclasses import dataclass
from logging import getLogger

from .flow_params import FlowParams
from ..exceptions import InvalidParameterException
from ..repflow import flow_kernels, unroll_forward
from ..tensorcore import Precision
from ..types import ReportRow
from ..utils import smooth_texture

logger = getLogger(__name__)

BENCH_COLUMNS = ("iterations", "size", "channels", "median_ms", "iqr_ms", "pairs_per_second", "runs")


@dataclass(frozen=True)
class BenchCase:
    iterations: int
    size: int
    channels: int = 1


@dataclass
class BenchResult:
    case: BenchCase
    timings: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.timings))

    @property
    def iqr(self) -> float:
        high, low = np.percentile(self.timings, [75, 25])
        return float(high - low)

    def row(self) -> ReportRow:
        return {
            "iterations": self.case.iterations,
            "size": self.case.size,
            "channels": self.case.channels,
            "median_ms": 1000.0 * self.median,
            "iqr_ms": 1000.0 * self.iqr,
            "pairs_per_second": self.case.channels / self.median if self.median > 0 else float("inf"),
            "runs": int(self.timings.size),
        }


class Benchmark:
    """
    Wall-clock timing of the unrolled flow forward pass on synthetic shift pairs. Warm-up runs are discarded and the
    median with the inter-quartile range of the timed runs is reported.
    """

    def __init__(
        self,
        runs: int = 10,
        warmup: int = 2,
        precision: Precision = Precision.STANDARD,
        params: tp.Optional[FlowParams] = None,
        clock: tp.Callable[[], float] = time.perf_counter,
    ) -> None:
        """
        :param runs: Timed runs per case, at least 1.
        :param warmup: Untimed runs per case.
        :param precision: Real-number width of the inputs.
        :param params: Flow parameters, defaults when omitted.
        :param clock: Time source in seconds.

        """

        if runs < 1:
            raise InvalidParameterException(f"At least one timed run is required, got {runs}")
        if warmup < 0:
            raise InvalidParameterException(f"warmup must be non-negative, got {warmup}")
        self.runs: int = runs
        self.warmup: int = warmup
        self.precision: Precision = precision
        self.params: FlowParams = params or FlowParams()
        self.clock: tp.Callable[[], float] = clock

    def measure(self, case: BenchCase) -> BenchResult:
        """
        :param case: Iterations, image size and channel count.

        :return: Timings of the timed runs in seconds.

        """

        first = np.stack([smooth_texture(case.size, seed) for seed in range(case.channels)])
        second = np.roll(first, 1, axis=-1)
        first = first.astype(self.precision.dtype)
        second = second.astype(self.precision.dtype)
        kernels = flow_kernels(self.params)
        tau, lam, theta = self.params.tau, self.params.lam, self.params.theta

        timings = []
        for run in range(self.warmup + self.runs):
            start = self.clock()
            unroll_forward(first, second, tau, lam, theta, kernels, case.iterations)
            elapsed = self.clock() - start
            if run >= self.warmup:
                timings.append(elapsed)

        result = BenchResult(case, np.array(timings))
        logger.info(f"Bench {case}: median {1000.0 * result.median:.2f} ms over {self.runs} runs")
        return result

    def sweep(self, cases: tp.Iterable[BenchCase]) -> tp.List[BenchResult]:
        return [self.measure(case) for case in cases]
