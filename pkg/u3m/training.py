# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Training loop.

Training is deterministic for a fixed seed: the sample order, every
augmentation draw and the parameter init come from seeded generators and
all reductions run in a fixed order on a single thread.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .augment import augment
from .checkpoint import save_checkpoint
from .datasets import stack_batch
from .errors import (
    ConsistencyError,
    DataError,
    DegenerateBatchError,
    NonFiniteError,
    TrainingError,
)
from .metrics import ConfusionMatrix, miou
from .model import U3M
from .params import ParameterStore
from .tensor import Array, Tape, Tensor, backward, suspended
from .types import ModalitySample, SegmentationMap, TrainConfig

logger = logging.getLogger(__name__)

LOSS_SMOOTHING = 0.9
"""Decay of the exponential moving average of the logged loss."""


def cross_entropy_loss(
    logits: Tensor,
    labels: SegmentationMap,
    ignore_index: int,
) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` over the pixels that are not ignored."""
    return ops.softmax_cross_entropy(logits, labels, ignore_index)


@dataclass
class AdamState:
    """First and second moments per trainable parameter and the step count."""

    first: dict[str, Array] = field(default_factory=dict)
    second: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParameterStore) -> "AdamState":
        """Start with zero moments for every trainable parameter."""
        first = {param.name: np.zeros(param.shape) for param in params.trainable()}
        second = {name: np.zeros_like(moment) for name, moment in first.items()}
        return cls(first, second, 0)


def adam_step(
    params: ParameterStore,
    grads: dict[str, Tensor],
    state: AdamState,
    cfg: TrainConfig,
    lr: float | None = None,
) -> AdamState:
    """Apply one bias-corrected Adam update to every trainable parameter.

    Frozen parameters are left alone. ``lr`` overrides ``cfg.lr``, which is
    how the schedule feeds in.
    """
    lr = cfg.lr if lr is None else lr
    trainable = params.trainable()
    for param in trainable:
        if param.name not in grads:
            msg = f"no gradient for trainable parameter {param.name}"
            raise ConsistencyError(msg)
        if grads[param.name].shape != param.shape:
            msg = (
                f"gradient of {param.name} is {grads[param.name].shape}, "
                f"the parameter is {param.shape}"
            )
            raise ConsistencyError(msg)

    state.step += 1
    first_bias = 1.0 - cfg.beta1**state.step
    second_bias = 1.0 - cfg.beta2**state.step
    for param in trainable:
        grad = grads[param.name].data
        first = state.first.setdefault(param.name, np.zeros(param.shape))
        second = state.second.setdefault(param.name, np.zeros(param.shape))
        first *= cfg.beta1
        first += (1.0 - cfg.beta1) * grad
        second *= cfg.beta2
        second += (1.0 - cfg.beta2) * grad * grad
        update = (first / first_bias) / (np.sqrt(second / second_bias) + cfg.adam_eps)
        params.assign(param.name, param.tensor.data - lr * update)
    return state


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Get the learning rate of ``step`` (0-based) under the configured schedule."""
    if cfg.schedule == "cosine" and total_steps > 0:
        return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total_steps))
    return cfg.lr


def evaluate(
    model: U3M,
    samples: list[ModalitySample],
    batch_size: int = 1,
    ignore_index: int | None = None,
) -> ConfusionMatrix:
    """Accumulate the confusion matrix of ``model`` over ``samples``."""
    if ignore_index is None:
        ignore_index = model.config.train.ignore_index
    cm = ConfusionMatrix(model.config.num_classes)
    with suspended():
        for start in range(0, len(samples), batch_size):
            images, labels = stack_batch(samples[start : start + batch_size])
            cm.update(model.predict(images), labels, ignore_index)
    return cm


@dataclass(frozen=True)
class EpochRecord:
    """Mean batch loss and train mIoU after one epoch."""

    epoch: int
    loss: float
    miou: float


@dataclass
class TrainingLog:
    """Everything a training run reports."""

    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_miou: float = -1.0
    best_epoch: int = 0

    @property
    def steps(self) -> int:
        """Number of optimizer steps taken."""
        return len(self.step_losses)

    def to_csv(self, path: Path) -> Path:
        """Write the ``epoch,loss,miou`` log."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(["epoch", "loss", "miou"])
            for record in self.epochs:
                writer.writerow(
                    [record.epoch, f"{record.loss:.6f}", f"{record.miou:.6f}"],
                )
        return path


def best_checkpoint_path(out: Path) -> Path:
    """Get the path the best-mIoU checkpoint is written to."""
    out = Path(out)
    return out.with_name(f"{out.stem}.best{out.suffix}")


def _step(  # noqa: PLR0913
    model: U3M,
    batch: list[ModalitySample],
    cfg: TrainConfig,
    state: AdamState,
    step: int,
    lr: float,
) -> float:
    """Run forward, backward and the update of one batch."""
    images, labels = stack_batch(batch)
    try:
        with Tape() as tape:
            loss = cross_entropy_loss(model(images), labels, cfg.ignore_index)
        adam_step(model.params, backward(tape, loss), state, cfg, lr)
    except NonFiniteError as error:
        msg = f"step {step}: {error}"
        raise TrainingError(msg) from error
    return loss.item()


def train(
    model: U3M,
    samples: list[ModalitySample],
    cfg: TrainConfig | None = None,
    out: Path | None = None,
    *,
    log_path: Path | None = None,
) -> TrainingLog:
    """Train ``model`` in place on ``samples``.

    Writes the final checkpoint to ``out`` and the best-mIoU one next to it
    (see :func:`best_checkpoint_path`) when ``out`` is given.
    """
    cfg = model.config.train if cfg is None else cfg
    if not samples:
        msg = "cannot train on an empty dataset"
        raise DataError(msg)

    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        total_steps = min(total_steps, cfg.max_steps)
    state = AdamState.for_params(model.params)
    log = TrainingLog()
    smoothed = None

    msg = "training %d parameters on %d samples for %d steps"
    logger.info(msg, model.params.num_elements(), len(samples), total_steps)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), cfg.batch_size):
            if log.steps >= total_steps:
                break
            batch = [
                augment(samples[index], rng, cfg)
                for index in order[start : start + cfg.batch_size]
            ]
            lr = learning_rate(cfg, log.steps, total_steps)
            try:
                loss = _step(model, batch, cfg, state, log.steps, lr)
            except DegenerateBatchError:
                msg = "step %d: every pixel is ignored, batch skipped"
                logger.warning(msg, log.steps)
                continue
            log.step_losses.append(loss)
            losses.append(loss)
            if smoothed is None:
                smoothed = loss
            smoothed = LOSS_SMOOTHING * smoothed + (1 - LOSS_SMOOTHING) * loss
            msg = "step %d loss %.6f lr %.3g"
            logger.debug(msg, log.steps, loss, lr)

        if not losses:
            continue
        score = miou(evaluate(model, samples, cfg.batch_size, cfg.ignore_index))
        record = EpochRecord(epoch, float(np.mean(losses)), score)
        log.epochs.append(record)
        msg = "epoch %d loss %.6f (smoothed %.6f) miou %.4f"
        logger.info(msg, epoch, record.loss, smoothed, score)
        if score > log.best_miou:
            log.best_miou, log.best_epoch = score, epoch
            if out is not None:
                save_checkpoint(best_checkpoint_path(out), model.params, model.config)
        if log.steps >= total_steps:
            break

    if out is not None:
        save_checkpoint(out, model.params, model.config)
    if log_path is not None:
        log.to_csv(log_path)
    return log
