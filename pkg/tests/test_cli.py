import json
import pytest

import numpy as np

from click.testing import CliRunner

from representationflow.classes import TinyModel
from representationflow.formats import load_checkpoint, read_flo, read_pnm, write_pnm
from representationflow.representation_flow_io import cli
from representationflow.tensorcore import FeatureMap
from representationflow.tvl1 import TvParams, tvl1_flow
from representationflow.utils import smooth_texture

TINY_TRAINING = [
    "--size",
    "8",
    "--frames",
    "2",
    "--samples-per-class",
    "1",
    "--test-samples-per-class",
    "1",
    "--c-prime",
    "2",
    "--iterations",
    "1",
    "--batch",
    "4",
]


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def image_pair(tmp_path):
    first = np.round(smooth_texture(24, seed=1)).astype(np.uint8)
    second = np.roll(first, 1, axis=1)
    paths = str(tmp_path / "first.pgm"), str(tmp_path / "second.pgm")
    write_pnm(paths[0], first)
    write_pnm(paths[1], second)
    return paths, first, second


def test_identical_images(runner, image_pair, tmp_path):
    (first_path, _), _, _ = image_pair
    output = str(tmp_path / "flow.flo")
    colour = str(tmp_path / "flow.ppm")
    result = runner.invoke(cli, ["flow", first_path, first_path, "-o", output, "--visualize", colour])
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(read_flo(output).stack(), 0.0)
    np.testing.assert_array_equal(read_pnm(colour), 255)


def test_flow_matches_reference_solver(runner, image_pair, tmp_path):
    (first_path, second_path), first, second = image_pair
    output = str(tmp_path / "flow.flo")
    result = runner.invoke(cli, ["flow", first_path, second_path, "-o", output, "--iterations", "30"])
    assert result.exit_code == 0, result.output
    expected = tvl1_flow(FeatureMap(first.astype(np.float64)), FeatureMap(second.astype(np.float64)), TvParams(), 30)
    np.testing.assert_array_equal(read_flo(output).stack(), expected.stack().astype(np.float32))


def test_per_channel_flow(runner, tmp_path):
    image = np.stack([np.round(smooth_texture(12, seed)).astype(np.uint8) for seed in range(3)], axis=-1)
    write_pnm(str(tmp_path / "a.ppm"), image)
    write_pnm(str(tmp_path / "b.ppm"), np.roll(image, 1, axis=0))
    result = runner.invoke(
        cli,
        ["flow", str(tmp_path / "a.ppm"), str(tmp_path / "b.ppm"), "-o", str(tmp_path / "f.flo"), "--per-channel"],
    )
    assert result.exit_code == 0, result.output
    assert sorted(path.name for path in tmp_path.glob("f_c*.flo")) == ["f_c0.flo", "f_c1.flo", "f_c2.flo"]


def test_flow_input_errors(runner, image_pair, tmp_path):
    (first_path, _), _, _ = image_pair
    small = str(tmp_path / "small.pgm")
    write_pnm(small, np.zeros((4, 4), dtype=np.uint8))
    corrupt = tmp_path / "corrupt.pgm"
    corrupt.write_bytes(b"XX\n4 4\n255\n" + bytes(16))
    output = str(tmp_path / "out.flo")

    assert runner.invoke(cli, ["flow", first_path, small, "-o", output]).exit_code == 7
    assert runner.invoke(cli, ["flow", first_path, str(corrupt), "-o", output]).exit_code == 3
    assert runner.invoke(cli, ["flow", first_path, str(tmp_path / "missing.pgm"), "-o", output]).exit_code == 3
    assert runner.invoke(cli, ["flow", first_path, first_path, "-o", output, "--tau", "0"]).exit_code == 2
    unwritable = str(tmp_path / "missing" / "out.flo")
    assert runner.invoke(cli, ["flow", first_path, first_path, "-o", unwritable]).exit_code == 6


def test_gradcheck_scalars(runner, tmp_path):
    report = tmp_path / "report.csv"
    result = runner.invoke(
        cli, ["gradcheck", "--iterations", "1", "--learn-flags", "scalars", "--size", "10", "--report", str(report)]
    )
    assert result.exit_code == 0, result.output
    rows = report.read_text().splitlines()
    assert [row.split(",")[0] for row in rows[1:]] == ["d_tau", "d_lambda", "d_theta"]


def test_gradcheck_layer_scope(runner):
    result = runner.invoke(cli, ["gradcheck", "--iterations", "1", "--scope", "layer", "--size", "8"])
    assert result.exit_code == 0, result.output
    assert "flow.log_theta" in result.output


def test_bench(runner, tmp_path):
    assert runner.invoke(cli, ["bench", "--runs", "0"]).exit_code == 2
    output = tmp_path / "bench.csv"
    arguments = ["bench", "--iterations", "1", "--size", "8", "--runs", "1", "--warmup", "0", "-o", str(output)]
    result = runner.invoke(cli, arguments)
    assert result.exit_code == 0, result.output
    assert output.read_text().startswith("iterations,size,channels,median_ms")


def test_train_without_epochs_keeps_initialization(runner, tmp_path):
    result = runner.invoke(cli, ["train", "--epochs", "0", "--output-dir", str(tmp_path)] + TINY_TRAINING)
    assert result.exit_code == 0, result.output
    saved = load_checkpoint(str(tmp_path / "checkpoint.rfw"))
    initial = TinyModel(c_prime=2, iterations=1).state_dict()
    assert list(saved) == list(initial)
    for name, value in initial.items():
        np.testing.assert_array_equal(saved[name], value)

    inspected = runner.invoke(cli, ["inspect-checkpoint", str(tmp_path / "checkpoint.rfw")])
    assert inspected.exit_code == 0
    assert "flow.flow.tau = 0.25" in inspected.output


def test_train_one_epoch(runner, tmp_path):
    result = runner.invoke(cli, ["train", "--epochs", "1", "--output-dir", str(tmp_path)] + TINY_TRAINING)
    assert result.exit_code == 0, result.output
    assert "final test accuracy" in result.output
    assert len((tmp_path / "history.csv").read_text().splitlines()) == 3


def test_ablate_iterations(runner, tmp_path):
    arguments = ["ablate", "--axis", "iterations", "--values", "1,2", "--epochs", "1", "--output-dir", str(tmp_path)]
    result = runner.invoke(cli, arguments + TINY_TRAINING)
    assert result.exit_code == 0, result.output
    rows = (tmp_path / "ablation_iterations.csv").read_text().splitlines()
    assert [row.split(",")[1] for row in rows[1:]] == ["1", "2"]


def test_config_file(runner, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"iterations": 1, "learn_flags": "scalars", "size": 10}))
    result = runner.invoke(cli, ["--config", str(config), "gradcheck"])
    assert result.exit_code == 0, result.output
    assert "d_tau" in result.output and "d_wx" not in result.output

    config.write_text(json.dumps({"unknown_setting": 1}))
    assert runner.invoke(cli, ["--config", str(config), "gradcheck"]).exit_code == 2


def test_missing_checkpoint(runner, tmp_path):
    assert runner.invoke(cli, ["inspect-checkpoint", str(tmp_path / "none.rfw")]).exit_code == 3
