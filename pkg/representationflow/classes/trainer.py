import typing as tp

import numpy as np

from dataclasses import dataclass, field, replace
from logging import getLogger

from .flow_params import LearnFlags
from .optimizer import MomentumSGD
from .tiny_model import FlowMode, TinyModel, cross_entropy
from ..constants import FLOW_LEARNING_RATE_SCALE, MOMENTUM
from ..dataset import ToyDatasetConfig, VideoSample, gen_motion_dataset, stack_batch
from ..exceptions import ConfigException, DivergenceException, InvalidParameterException, NonFiniteException
from ..formats import save_checkpoint, write_csv
from ..tensorcore import Precision
from ..types import ConfusionTyping, HistoryRecord, ReportRow

logger = getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "split", "loss", "accuracy")
ABLATION_AXES = ("learn_flags", "iterations", "fcf")


@dataclass(frozen=True)
class TrainHyper:
    """
    Optimizer recipe and the flow settings applied before training.

    """

    lr: float = 0.05
    momentum: float = MOMENTUM
    epochs: int = 30
    batch: int = 8
    flow_lr_scale: float = FLOW_LEARNING_RATE_SCALE
    learn_flags: tp.Optional[LearnFlags] = None
    iterations: tp.Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch < 1 or self.flow_lr_scale < 0:
            raise ConfigException("lr, epochs and flow_lr_scale must be non-negative and batch >= 1")


@dataclass
class EvaluationReport:
    accuracy: float
    loss: float
    confusion: ConfusionTyping = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(sum(sum(row) for row in self.confusion))


def _batches(count: int, batch: int) -> tp.List[slice]:
    return [slice(start, min(start + batch, count)) for start in range(0, count, batch)]


def evaluate(model: TinyModel, data: tp.Sequence[VideoSample], batch: int = 16) -> EvaluationReport:
    """
    Accuracy, mean loss and confusion counts (rows are true classes, columns predictions).

    :param model: Model to evaluate.
    :param data: Non-empty list of samples.
    :param batch: Evaluation batch size.

    :return: EvaluationReport.

    """

    if not data:
        raise InvalidParameterException("Cannot evaluate on an empty dataset")

    confusion = np.zeros((model.num_classes, model.num_classes), dtype=int)
    losses = []
    for part in _batches(len(data), batch):
        frames, labels = stack_batch(data[part])
        probabilities = model.predict(frames)
        for probability, label in zip(probabilities, labels):
            confusion[int(label), int(np.argmax(probability))] += 1
            losses.append(cross_entropy(probability, int(label)))

    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvaluationReport(accuracy=accuracy, loss=float(np.mean(losses)), confusion=confusion.tolist())


def train(
    model: TinyModel,
    data: tp.Sequence[VideoSample],
    hyper: TrainHyper,
    test_data: tp.Optional[tp.Sequence[VideoSample]] = None,
    checkpoint_path: tp.Optional[str] = None,
    history_path: tp.Optional[str] = None,
) -> tp.Tuple[TinyModel, tp.List[HistoryRecord]]:
    """
    Train with SGD and momentum; flow parameters use ``flow_lr_scale * lr``. Samples are reshuffled every epoch from
    the hyperparameter seed. One train record (and one test record when test data is given) is appended per epoch.

    :param model: Model, updated in place.
    :param data: Non-empty training samples.
    :param hyper: Recipe.
    :param test_data: Optional held-out samples evaluated after every epoch.
    :param checkpoint_path: Checkpoint written after the last epoch.
    :param history_path: CSV history written after the last epoch.

    :return: The model and the history records.

    """

    if not data:
        raise InvalidParameterException("Cannot train on an empty dataset")

    model.configure_flow(hyper.learn_flags, hyper.iterations, hyper.flow_lr_scale)
    optimizer = MomentumSGD(model, hyper.lr, hyper.momentum)
    rng = np.random.default_rng(hyper.seed)
    history: tp.List[HistoryRecord] = []
    step = 0

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(data))
        for part in _batches(len(data), hyper.batch):
            frames, labels = stack_batch([data[index] for index in order[part]])
            loss, grads = model.loss_and_gradients(frames, labels)
            if not np.isfinite(loss):
                raise DivergenceException(f"Loss became {loss} at step {step}", step)
            try:
                optimizer.step(grads)
            except NonFiniteException as error:
                raise DivergenceException(f"{error} at step {step}", step) from error
            step += 1

        for split, samples in (("train", data), ("test", test_data)):
            if not samples:
                continue
            report = evaluate(model, samples, hyper.batch)
            history.append({"epoch": epoch, "split": split, "loss": report.loss, "accuracy": report.accuracy})
        summary = ", ".join(
            f"{record['split']} loss {record['loss']:.4f} acc {record['accuracy']:.3f}"
            for record in history
            if record["epoch"] == epoch
        )
        logger.info(f"Epoch {epoch}/{hyper.epochs}: {summary}")

    if history_path:
        write_csv(history_path, HISTORY_COLUMNS, history)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model.state_dict())
    return model, history


@dataclass(frozen=True)
class AblationBase:
    """
    Shared settings of every ablation cell.

    """

    dataset: ToyDatasetConfig = ToyDatasetConfig()
    hyper: TrainHyper = TrainHyper()
    mode: FlowMode = FlowMode.FLOW
    c_prime: int = 8
    iterations: int = 10
    learn_flags: LearnFlags = LearnFlags()
    precision: Precision = Precision.WIDE
    threads: int = 1
    seed: int = 0


def _cell(axis: str, value: tp.Any, base: AblationBase) -> tp.Tuple[FlowMode, int, LearnFlags]:
    if axis == "learn_flags":
        return base.mode, base.iterations, value if isinstance(value, LearnFlags) else LearnFlags.preset(str(value))
    if axis == "iterations":
        return base.mode, int(value), base.learn_flags
    if axis == "fcf":
        enabled = value if isinstance(value, bool) else str(value).lower() in ("on", "true", "1", "fcf")
        return FlowMode.FCF if enabled else FlowMode.FLOW, base.iterations, base.learn_flags
    raise ConfigException(f"Unknown ablation axis {axis!r}, choose from {ABLATION_AXES}")


def run_ablation(
    axis: str, values: tp.Sequence[tp.Any], base: AblationBase, report_path: tp.Optional[str] = None
) -> tp.List[ReportRow]:
    """
    One training run per axis value, all from the same seeds. Rows report the final train and test accuracy.

    :param axis: ``learn_flags`` (preset names), ``iterations`` or ``fcf`` (on/off).
    :param values: Cell values along the axis.
    :param base: Shared settings.
    :param report_path: Optional CSV destination.

    :return: One row per value, in the given order.

    """

    if axis not in ABLATION_AXES:
        raise ConfigException(f"Unknown ablation axis {axis!r}, choose from {ABLATION_AXES}")

    train_data, test_data = gen_motion_dataset(base.dataset, base.seed)
    rows: tp.List[ReportRow] = []
    for value in values:
        mode, iterations, learn_flags = _cell(axis, value, base)
        model = TinyModel(
            channels=base.dataset.channels,
            num_classes=base.dataset.num_classes,
            c_prime=base.c_prime,
            iterations=iterations,
            mode=mode,
            learn_flags=learn_flags,
            precision=base.precision,
            seed=base.seed,
            threads=base.threads,
        )
        hyper = replace(base.hyper, learn_flags=learn_flags, iterations=iterations)
        _, history = train(model, train_data, hyper, test_data)
        final = {record["split"]: record for record in history[-2:]}
        rows.append(
            {
                "axis": axis,
                "value": learn_flags.name if axis == "learn_flags" else str(value),
                "train_accuracy": final.get("train", {}).get("accuracy", float("nan")),
                "test_accuracy": final.get("test", {}).get("accuracy", float("nan")),
                "final_loss": final.get("train", {}).get("loss", float("nan")),
            }
        )
        logger.info(f"Ablation {axis}={rows[-1]['value']}: test accuracy {rows[-1]['test_accuracy']:.3f}")

    if report_path:
        write_csv(report_path, ("axis", "value", "train_accuracy", "test_accuracy", "final_loss"), rows)
    return rows
