# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Command-line tests."""

from pathlib import Path

import pytest
from click.testing import CliRunner

from u3m.cli import u3m
from u3m.netpbm import read_image


@pytest.fixture()
def runner() -> CliRunner:
    """Click runner."""
    return CliRunner()


def test_synth_train_eval_predict(
    tmp_path: Path,
    runner: CliRunner,
    config_file: Path,
) -> None:
    """The commands chain from synthetic data to a predicted label map."""
    data, run = tmp_path / "data", tmp_path / "run"
    result = runner.invoke(
        u3m,
        ["synth", "--out", str(data), "--n", "4", "--test-n", "2", "--seed", "1"],
    )
    assert result.exit_code == 0, result.output
    assert len(list((data / "train").iterdir())) == 4  # noqa: PLR2004
    assert sorted(path.name for path in (data / "test").iterdir()) == [
        "sample0004",
        "sample0005",
    ]

    model = run / "model.u3m"
    args = ["train", "--config", str(config_file), "--data", str(data)]
    result = runner.invoke(u3m, [*args, "--out", str(model), "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert "saved" in result.output
    assert model.is_file()
    assert (run / "model.best.u3m").is_file()
    log = (run / "model.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,miou"
    assert len(log) == 3  # noqa: PLR2004

    table = run / "table.csv"
    args = ["eval", "--ckpt", str(model), "--data", str(data), "--csv", str(table)]
    result = runner.invoke(u3m, args)
    assert result.exit_code == 0, result.output
    assert "background" in result.output
    assert "mIoU" in result.output
    assert table.is_file()

    labels = run / "pred.pgm"
    sample = data / "test" / "sample0004"
    args = ["predict", "--ckpt", str(model), "--sample", str(sample)]
    result = runner.invoke(u3m, [*args, "--out", str(labels)])
    assert result.exit_code == 0, result.output
    prediction = read_image(labels)
    assert prediction.shape == (32, 32)
    assert prediction.max() < 3  # noqa: PLR2004


def test_gradcheck_ops(runner: CliRunner) -> None:
    """The op gradients agree with finite differences."""
    result = runner.invoke(u3m, ["gradcheck", "--module", "ops"])
    assert result.exit_code == 0, result.output
    assert "FAIL" not in result.output
    assert "max rel err" in result.output


def test_usage_errors(tmp_path: Path, runner: CliRunner) -> None:
    """Bad options and missing files are usage errors."""
    result = runner.invoke(u3m, ["gradcheck", "--module", "decoder"])
    assert result.exit_code == 2  # noqa: PLR2004
    result = runner.invoke(u3m, ["train", "--config", str(tmp_path / "absent.cfg")])
    assert result.exit_code == 2  # noqa: PLR2004


def test_package_errors_exit_one(tmp_path: Path, runner: CliRunner) -> None:
    """A corrupt checkpoint is reported in one line."""
    broken = tmp_path / "broken.u3m"
    broken.write_bytes(b"U3M\x01 not really a checkpoint")
    (tmp_path / "data").mkdir()
    args = ["eval", "--ckpt", str(broken), "--data", str(tmp_path / "data")]
    result = runner.invoke(u3m, args)
    assert result.exit_code == 1
    assert "CRC-32" in result.output


def test_synth_rejects_unaligned_size(tmp_path: Path, runner: CliRunner) -> None:
    """Synthetic scenes are multiples of 32."""
    result = runner.invoke(u3m, ["synth", "--out", str(tmp_path), "--size", "40"])
    assert result.exit_code == 1
    assert "multiple of 32" in result.output
