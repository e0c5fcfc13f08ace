# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Command-line interface for `u3m`."""

import logging
from collections.abc import Callable
from functools import wraps
from pathlib import Path

import numpy as np
from click import (
    INT,
    Choice,
    FloatRange,
    IntRange,
    Path as PathType,
    echo,
    group,
    option,
    secho,
)
from click.exceptions import Exit
from click_params import IntListParamType

from .config import U3M_GRADCHECK_EPS, U3M_GRADCHECK_TOLERANCE
from .datasets import write_dataset_dir
from .errors import U3MError
from .gradcheck import MODULES, run_suite
from .metrics import write_table_csv
from .netpbm import write_image
from .services import SegmentationService, build_service
from .synth import synth_dataset
from .types import Color

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

ExistingFile = PathType(exists=True, dir_okay=False, path_type=Path)
ExistingDir = PathType(exists=True, file_okay=False, path_type=Path)
OutputPath = PathType(path_type=Path)


def configure_logging(*, verbose: bool = False, timestamps: bool = False) -> None:
    """Route package logs to stderr."""
    log_format = f"%(asctime)s {LOG_FORMAT}" if timestamps else LOG_FORMAT
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=log_format, force=True)


def report_errors[T](func: Callable[..., T]) -> Callable:
    """Turn package errors into a red message and exit code 1."""

    @wraps(func)
    def report(*args: dict, **kwargs: dict) -> T:
        try:
            return func(*args, **kwargs)
        except U3MError as error:
            secho(str(error), fg=Color.error, err=True)
            raise Exit(1) from error

    return report


@group()
@option("--verbose", is_flag=True, default=False, help="Log every step.")
@option("--timestamps", is_flag=True, default=False, help="Prefix logs with time.")
def u3m(*, verbose: bool, timestamps: bool) -> None:
    """u3m multimodal segmentation commands."""
    configure_logging(verbose=verbose, timestamps=timestamps)


@u3m.command("train")
@option("--config", type=ExistingFile, required=True)
@option("--data", type=ExistingDir, required=True)
@option("--out", type=OutputPath, required=True)
@option("--log", type=OutputPath, default=None)
@option("--seed", type=IntRange(min=0), envvar="U3M_SEED", default=None)
@report_errors
@build_service
def train(
    segmentation_service: SegmentationService,
    data: Path,
    out: Path,
    log: Path | None,
) -> None:
    """Train a model on the train split of DATA and save it to OUT."""
    log = out.with_suffix(".csv") if log is None else log
    result = segmentation_service.train(data, out, log)
    msg = (
        f"{result.steps} steps, best train mIoU {100 * result.best_miou:.1f} "
        f"at epoch {result.best_epoch}, saved {out}"
    )
    secho(msg, fg=Color.success)


@u3m.command("eval")
@option("--ckpt", type=ExistingFile, required=True)
@option("--data", type=ExistingDir, required=True)
@option("--split", type=str, default="test", show_default=True)
@option("--csv", "csv_path", type=OutputPath, default=None)
@report_errors
@build_service
def evaluate(
    segmentation_service: SegmentationService,
    data: Path,
    split: str,
    csv_path: Path | None,
) -> None:
    """Print the per-class IoU table of a checkpoint."""
    cm = segmentation_service.evaluate(data, split)
    echo(segmentation_service.table(cm))
    if csv_path is not None:
        write_table_csv(cm, segmentation_service.config.names(), csv_path)


@u3m.command("predict")
@option("--ckpt", type=ExistingFile, required=True)
@option("--sample", type=ExistingDir, required=True)
@option("--out", type=OutputPath, required=True)
@report_errors
@build_service
def predict(
    segmentation_service: SegmentationService,
    sample: Path,
    out: Path,
) -> None:
    """Write the predicted label map of one sample directory."""
    prediction = segmentation_service.predict(sample)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, prediction.astype(np.uint8))
    secho(f"wrote {out}", fg=Color.success)


@u3m.command("synth")
@option("--out", type=OutputPath, required=True)
@option("--n", "count", type=IntRange(min=1), default=8, show_default=True)
@option("--modalities", type=IntRange(min=1), default=2, show_default=True)
@option("--classes", type=IntRange(min=2), default=3, show_default=True)
@option("--seed", type=IntRange(min=0), envvar="U3M_SEED", default=0)
@option("--test-n", "test_count", type=IntRange(min=1), default=None)
@option("--size", type=IntRange(min=32), default=32, show_default=True)
@option("--degrade", type=FloatRange(0.0, 1.0), default=0.25, show_default=True)
@report_errors
def synth(  # noqa: PLR0913
    *,
    out: Path,
    count: int,
    modalities: int,
    classes: int,
    seed: int,
    test_count: int | None,
    size: int,
    degrade: float,
) -> None:
    """Write a synthetic train/test dataset to OUT."""
    test_count = max(1, count // 2) if test_count is None else test_count
    samples = synth_dataset(
        count + test_count,
        modalities,
        classes,
        (size, size),
        seed,
        degrade_fraction=degrade,
    )
    write_dataset_dir(out, "train", samples[:count])
    write_dataset_dir(out, "test", samples[count:])
    secho(f"wrote {count} train and {test_count} test samples", fg=Color.success)


@u3m.command("gradcheck")
@option("--module", type=Choice(MODULES), default=None)
@option("--eps", type=float, default=U3M_GRADCHECK_EPS, show_default=True)
@option("--tolerance", type=float, default=U3M_GRADCHECK_TOLERANCE)
@option("--seed", type=INT, default=0)
@report_errors
def gradcheck(
    module: str | None,
    eps: float,
    tolerance: float,
    seed: int,
) -> None:
    """Compare analytic gradients with central differences."""
    results = run_suite(module, eps=eps, tolerance=tolerance, seed=seed)
    for result in results:
        status = "ok" if result.passed else "FAIL"
        color = Color.success if result.passed else Color.error
        name = f"{result.case.module}.{result.case.name}"
        secho(f"{status:4} {name} {result.report.max_rel_err:.3e}", fg=color)
    worst = max(result.report.max_rel_err for result in results)
    failed = [result for result in results if not result.passed]
    if failed:
        secho(f"{len(failed)} of {len(results)} checks failed", fg=Color.error)
        raise Exit(1)
    secho(f"max rel err {worst:.3e} < {tolerance:g}", fg=Color.success)


@u3m.command("ablate")
@option("--config", type=ExistingFile, required=True)
@option("--data", type=ExistingDir, required=True)
@option("--subsets", type=IntListParamType(","), multiple=True)
@option("--seeds", type=IntRange(min=1), default=3, show_default=True)
@option("--seed", type=IntRange(min=0), envvar="U3M_SEED", default=None)
@report_errors
@build_service
def ablate(
    segmentation_service: SegmentationService,
    data: Path,
    subsets: tuple[list[int], ...],
    seeds: int,
) -> None:
    """Score one model per modality subset on the test split.

    Without ``--subsets`` modality 0 alone is compared with all modalities.
    """
    chosen = [tuple(subset) for subset in subsets]
    if not chosen:
        everything = tuple(range(segmentation_service.config.modalities))
        chosen = list(dict.fromkeys([(0,), everything]))
    scores = segmentation_service.ablate(data, chosen, seeds)
    for index, (subset, values) in enumerate(scores.items()):
        label = ",".join(map(str, subset))
        mean, spread = 100 * np.mean(values), 100 * np.std(values)
        color = Color.alternate[index % len(Color.alternate)]
        secho(f"{label:>12} {mean:6.1f} ± {spread:.1f}", fg=color)
