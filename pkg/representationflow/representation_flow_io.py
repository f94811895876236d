import click
import logging
import os
import sys

import typing as tp
import numpy as np

from functools import wraps

from representationflow import (
    AblationBase,
    BenchCase,
    Benchmark,
    FlowMode,
    LearnFlags,
    TinyModel,
    ToyDatasetConfig,
    TrainHyper,
    constants,
    fcf_checker,
    flow_checker,
    layer_checker,
    run_ablation,
    train,
)
from representationflow.config import RunConfig, load_config_file
from representationflow.dataset import gen_motion_dataset
from representationflow.exceptions import (
    ConfigException,
    DivergenceException,
    GradientCheckException,
    InvalidParameterException,
    MalformedFileException,
    NonFiniteException,
    ShapeMismatchException,
)
from representationflow.formats import (
    image_to_feature_map,
    load_checkpoint,
    read_pnm,
    write_csv,
    write_flo,
    write_pnm,
)
from representationflow.classes.benchmark import BENCH_COLUMNS
from representationflow.tensorcore import Precision
from representationflow.tvl1 import TvParams, tvl1_flow
from representationflow.visualization import flow_to_color

logger = logging.getLogger(__name__)

LEARN_PRESETS = ["none", "sobel", "divergence", "scalars", "divergence+scalars", "all"]


class OutputError(Exception):
    pass


def _write(writer: tp.Callable[..., None], path: str, *args) -> None:
    try:
        writer(path, *args)
    except OSError as error:
        raise OutputError(f"Cannot write {path}: {error}") from error


def exit_codes(func):
    """
    Turn library exceptions into documented exit codes with a one-line message on stderr.

    :param func: Command callback.

    :return: Wrapped callback.

    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigException, InvalidParameterException) as error:
            code, message = constants.EXIT_USAGE, str(error)
        except ShapeMismatchException as error:
            code, message = constants.EXIT_DIMENSION, str(error)
        except (MalformedFileException, FileNotFoundError) as error:
            code, message = constants.EXIT_INPUT, str(error)
        except DivergenceException as error:
            code, message = constants.EXIT_NUMERICAL, f"{error} (step {error.step})"
        except NonFiniteException as error:
            code, message = constants.EXIT_NUMERICAL, str(error)
        except GradientCheckException as error:
            code, message = constants.EXIT_GRADCHECK, f"{error}: {', '.join(error.leaves)}"
        except OutputError as error:
            code, message = constants.EXIT_OUTPUT, str(error)
        click.echo(f"Error: {message}", err=True)
        sys.exit(code)

    return wrapper


def _all_option_names() -> tp.Set[str]:
    names = RunConfig.keys()
    for command in cli.commands.values():
        names.update(param.name for param in command.params)
    return names


def _load_config(ctx: click.Context, param: click.Parameter, value: tp.Optional[str]) -> None:
    if value is None:
        return
    try:
        settings = load_config_file(value, _all_option_names())
    except ConfigException as error:
        raise click.BadParameter(str(error), ctx=ctx, param=param)
    ctx.default_map = {
        name: {key: item for key, item in settings.items() if key in {p.name for p in command.params}}
        for name, command in cli.commands.items()
    }


@click.group()
@click.option(
    "--config",
    type=click.Path(dir_okay=False),
    callback=_load_config,
    is_eager=True,
    expose_value=False,
    help="JSON object of settings used as defaults; explicit flags win.",
)
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
    help="Logging verbosity. Default is WARNING.",
)
def cli(log_level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, log_level.upper()), format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def flow_parameter_options(func):
    for option in reversed(
        [
            click.option("--tau", type=float, default=constants.DEFAULT_TAU, show_default=True, help="Time step."),
            click.option(
                "--lambda", "lam", type=float, default=constants.DEFAULT_LAMBDA, show_default=True, help="Data weight."
            ),
            click.option(
                "--theta", type=float, default=constants.DEFAULT_THETA, show_default=True, help="Coupling weight."
            ),
        ]
    ):
        func = option(func)
    return func


def training_options(func):
    for option in reversed(
        [
            click.option("--epochs", type=int, default=30, show_default=True, help="Training epochs."),
            click.option("--lr", type=float, default=0.05, show_default=True, help="Base learning rate."),
            click.option("--batch", type=int, default=8, show_default=True, help="Batch size."),
            click.option(
                "--flow-lr-scale",
                type=float,
                default=constants.FLOW_LEARNING_RATE_SCALE,
                show_default=True,
                help="Learning-rate multiplier of the flow parameters.",
            ),
            click.option("--iterations", type=int, default=10, show_default=True, help="Unrolled flow iterations."),
            click.option("--c-prime", type=int, default=8, show_default=True, help="Reduced channel count."),
            click.option(
                "--learn-flags",
                type=click.Choice(LEARN_PRESETS),
                default="divergence+scalars",
                show_default=True,
                help="Flow parameter groups to learn.",
            ),
            click.option(
                "--mode",
                type=click.Choice([mode.value for mode in FlowMode]),
                default=FlowMode.FLOW.value,
                show_default=True,
                help="Flow stage: one layer, flow-conv-flow, flow-of-flow or appearance only.",
            ),
            click.option("--samples-per-class", type=int, default=16, show_default=True),
            click.option("--test-samples-per-class", type=int, default=8, show_default=True),
            click.option("--frames", type=int, default=8, show_default=True, help="Frames per video."),
            click.option("--size", type=int, default=32, show_default=True, help="Frame side length."),
            click.option("--channels", type=int, default=1, show_default=True, help="Frame channels."),
            click.option("--classes", type=int, default=4, show_default=True, help="Motion classes."),
            click.option("--distractor/--no-distractor", default=False, help="Add a static appearance overlay."),
            click.option("--seed", type=int, default=0, show_default=True, help="Seed of data, init and shuffling."),
            click.option("--threads", type=int, default=1, show_default=True, help="Flow worker threads."),
            click.option(
                "--precision",
                type=click.Choice([precision.value for precision in Precision]),
                default=Precision.WIDE.value,
                show_default=True,
            ),
            click.option(
                "--output-dir",
                type=click.Path(file_okay=False),
                default="runs",
                show_default=True,
                help="Directory receiving the artifacts.",
            ),
        ]
    ):
        func = option(func)
    return func


def _dataset_config(options: tp.Dict[str, tp.Any]) -> ToyDatasetConfig:
    return ToyDatasetConfig(
        num_classes=options["classes"],
        samples_per_class=options["samples_per_class"],
        test_samples_per_class=options["test_samples_per_class"],
        frames=options["frames"],
        size=options["size"],
        channels=options["channels"],
        distractor=options["distractor"],
    )


def _hyper(options: tp.Dict[str, tp.Any], config: RunConfig) -> TrainHyper:
    return TrainHyper(
        lr=options["lr"],
        epochs=options["epochs"],
        batch=options["batch"],
        flow_lr_scale=options["flow_lr_scale"],
        learn_flags=LearnFlags.preset(config.learn_flags),
        iterations=config.iterations,
        seed=config.seed,
    )


def _make_output_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as error:
        raise OutputError(f"Cannot create output directory {path}: {error}") from error


@cli.command(help="Compute TV-L1 flow between two PGM/PPM images and write a .flo file")
@click.argument("image1", type=click.Path(dir_okay=False))
@click.argument("image2", type=click.Path(dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True, help="Destination .flo file.")
@click.option("--visualize", type=click.Path(dir_okay=False), help="Optional PPM colour-coded flow image.")
@flow_parameter_options
@click.option("--iterations", type=int, default=100, show_default=True, help="Solver iterations.")
@click.option("--per-channel", is_flag=True, help="Flow per colour channel instead of on Rec. 601 luma.")
@click.option(
    "--precision",
    type=click.Choice([precision.value for precision in Precision]),
    default=Precision.WIDE.value,
    show_default=True,
)
@exit_codes
def flow(image1: str, image2: str, visualize: tp.Optional[str], per_channel: bool, **options) -> None:
    """
    Flow on image files. Colour inputs are converted to luma unless ``--per-channel`` writes one flow file per colour
    plane with a ``_c<index>`` suffix.
    """

    config = RunConfig.from_options("flow", {"inputs": (image1, image2), **options})
    first, second = read_pnm(image1), read_pnm(image2)
    if first.shape != second.shape:
        raise ShapeMismatchException(f"Image dimensions differ: {first.shape} vs {second.shape}")

    dtype = config.compute_precision.dtype
    f1 = image_to_feature_map(first, per_channel, dtype)
    f2 = image_to_feature_map(second, per_channel, dtype)
    params = TvParams(tau=config.tau, lam=config.lam, theta=config.theta)

    for channel in range(f1.channels):
        field = tvl1_flow(f1.channel(channel), f2.channel(channel), params, config.iterations)
        suffix = f"_c{channel}" if f1.channels > 1 else ""
        _write(write_flo, _suffixed(config.output, suffix), field)
        if visualize:
            _write(write_pnm, _suffixed(visualize, suffix), flow_to_color(field))
        click.echo(_suffixed(config.output, suffix))


def _suffixed(path: str, suffix: str) -> str:
    stem, extension = os.path.splitext(path)
    return f"{stem}{suffix}{extension}"


@cli.command(help="Compare reverse-mode gradients with finite differences")
@click.option("--iterations", type=int, default=5, show_default=True, help="Unrolled flow iterations.")
@click.option(
    "--learn-flags", type=click.Choice(LEARN_PRESETS), default="all", show_default=True, help="Leaves to check."
)
@click.option(
    "--scope",
    type=click.Choice(["flow", "layer", "fcf", "fof"]),
    default="flow",
    show_default=True,
    help="Bare flow, full layer, flow-conv-flow or flow-of-flow.",
)
@click.option("--size", type=int, default=16, show_default=True, help="Fixture side length.")
@click.option("--seed", type=int, default=0, show_default=True, help="Fixture seed.")
@click.option("--report", type=click.Path(dir_okay=False), help="Optional CSV report.")
@exit_codes
def gradcheck(scope: str, size: int, report: tp.Optional[str], **options) -> None:
    config = RunConfig.from_options("gradcheck", options)
    if scope == "flow":
        checker = flow_checker(config.iterations, size, config.seed, LearnFlags.preset(config.learn_flags))
    elif scope == "layer":
        checker = layer_checker(config.iterations, size=size, seed=config.seed)
    else:
        checker = fcf_checker(config.iterations, size=size, with_mid=scope == "fcf", seed=config.seed)

    reports = checker.run()
    for leaf_report in reports:
        click.echo(
            f"{leaf_report.leaf:28s} {leaf_report.max_relative_error:.3e} "
            f"{'pass' if leaf_report.passed else 'FAIL'} ({leaf_report.checked} entries)"
        )
    if report:
        _write(write_csv, report, ("leaf", "max_relative_error", "checked", "status"), [r.row() for r in reports])

    failing = [leaf_report.leaf for leaf_report in reports if not leaf_report.passed]
    if failing:
        raise GradientCheckException("Gradient check failed", failing)


@cli.command(help="Time the unrolled flow forward pass")
@click.option("--iterations", "iteration_counts", type=int, multiple=True, default=(10, 100), show_default=True)
@click.option("--size", "sizes", type=int, multiple=True, default=(32, 64), show_default=True)
@click.option("--channels", type=int, default=1, show_default=True, help="Independent planes per run.")
@click.option("--runs", type=int, default=10, show_default=True, help="Timed runs per case.")
@click.option("--warmup", type=int, default=2, show_default=True, help="Discarded runs per case.")
@click.option(
    "--precision",
    type=click.Choice([precision.value for precision in Precision]),
    default=Precision.STANDARD.value,
    show_default=True,
)
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="CSV destination, stdout when omitted.")
@exit_codes
def bench(
    iteration_counts: tp.Tuple[int, ...],
    sizes: tp.Tuple[int, ...],
    channels: int,
    runs: int,
    warmup: int,
    precision: str,
    output: tp.Optional[str],
) -> None:
    """
    Timings are CPU wall-clock numbers of this implementation only.
    """

    benchmark = Benchmark(runs=runs, warmup=warmup, precision=Precision(precision))
    cases = [BenchCase(iterations, size, channels) for size in sizes for iterations in iteration_counts]
    rows = [result.row() for result in benchmark.sweep(cases)]
    if output:
        _write(write_csv, output, BENCH_COLUMNS, rows)
        return
    click.echo(",".join(BENCH_COLUMNS))
    for row in rows:
        click.echo(",".join(str(row[column]) for column in BENCH_COLUMNS))


@cli.command(name="train", help="Train the toy motion classifier")
@training_options
@exit_codes
def train_model(**options) -> None:
    config = RunConfig.from_options("train", options)
    dataset = _dataset_config(options)
    train_data, test_data = gen_motion_dataset(dataset, config.seed)
    model = TinyModel(
        channels=dataset.channels,
        num_classes=dataset.num_classes,
        c_prime=config.c_prime,
        iterations=config.iterations,
        mode=FlowMode(options["mode"]),
        learn_flags=LearnFlags.preset(config.learn_flags),
        precision=config.compute_precision,
        seed=config.seed,
        threads=config.threads,
    )
    _make_output_dir(config.output_dir)
    history_path = os.path.join(config.output_dir, "history.csv")
    checkpoint_path = os.path.join(config.output_dir, "checkpoint.rfw")
    try:
        _, history = train(model, train_data, _hyper(options, config), test_data, checkpoint_path, history_path)
    except OSError as error:
        raise OutputError(f"Cannot write training artifacts: {error}") from error
    if history:
        click.echo(f"final {history[-1]['split']} accuracy {history[-1]['accuracy']:.4f}")
    click.echo(checkpoint_path)


@cli.command(help="Run one training per value along an ablation axis")
@click.option(
    "--axis", type=click.Choice(["learn_flags", "iterations", "fcf"]), required=True, help="Ablation axis."
)
@click.option("--values", type=str, required=True, help="Comma-separated axis values, e.g. 1,5,10,20.")
@training_options
@exit_codes
def ablate(axis: str, values: str, **options) -> None:
    config = RunConfig.from_options("ablate", options)
    base = AblationBase(
        dataset=_dataset_config(options),
        hyper=_hyper(options, config),
        mode=FlowMode(options["mode"]),
        c_prime=config.c_prime,
        iterations=config.iterations,
        learn_flags=LearnFlags.preset(config.learn_flags),
        precision=config.compute_precision,
        threads=config.threads,
        seed=config.seed,
    )
    cells = [value.strip() for value in values.split(",") if value.strip()]
    if not cells:
        raise ConfigException("No ablation values given")
    _make_output_dir(config.output_dir)
    report_path = os.path.join(config.output_dir, f"ablation_{axis}.csv")
    try:
        rows = run_ablation(axis, cells, base, report_path)
    except OSError as error:
        raise OutputError(f"Cannot write ablation report: {error}") from error
    for row in rows:
        click.echo(f"{row['axis']}={row['value']}: test accuracy {row['test_accuracy']:.4f}")
    click.echo(report_path)


@cli.command(name="inspect-checkpoint", help="List the tensors of a checkpoint and the learned flow scalars")
@click.argument("path", type=click.Path(dir_okay=False))
@exit_codes
def inspect_checkpoint(path: str) -> None:
    state = load_checkpoint(path)
    for name, value in state.items():
        click.echo(f"{name:40s} {str(value.shape):16s}")
    for name, value in state.items():
        for prefix, label in (("log_tau", "tau"), ("log_lambda", "lambda"), ("log_theta", "theta")):
            if name.endswith(prefix):
                click.echo(f"{name[: -len(prefix)]}{label} = {float(np.exp(value)):.6g}")


if __name__ == "__main__":
    cli()
