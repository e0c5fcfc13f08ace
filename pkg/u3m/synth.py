# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Synthetic multimodal scenes.

Scenes are a background of class 0 with rectangles and disks of random
classes drawn on a grid of 4x4 pixel cells. No single modality separates
every class:

- modality 0 is a color image in which the two highest classes share a
  color, and a declared fraction of samples has it replaced by noise,
- every further modality is a noisy intensity image in which classes 0
  and 1 share an intensity.

Together the modalities identify every class, so a model can only solve
the task by combining them.
"""

import logging

import numpy as np
import numpy.typing as npt

from .errors import ConfigError
from .types import ModalitySample, SegmentationMap

logger = logging.getLogger(__name__)

CELL = 4
"""Edge of the grid cell every shape is aligned to."""

COLOR_NOISE = 0.05
"""Standard deviation of the noise on the color modality."""

INTENSITY_NOISE = 0.1
"""Standard deviation of the noise on the intensity modalities."""

MIN_CLASSES_PER_LABEL = 2


def _levels(groups: int) -> npt.NDArray[np.float64]:
    return (np.arange(groups) + 1.0) / (groups + 1.0)


def color_table(classes: int) -> npt.NDArray[np.float64]:
    """Get the ``(classes, 3)`` colors of modality 0."""
    groups = np.arange(classes)
    if classes > 2:  # noqa: PLR2004
        groups[-1] = classes - 2
    count = int(groups.max()) + 1
    levels = _levels(count)
    table = np.stack(
        [levels, levels[::-1], levels[(np.arange(count) * 2) % count]],
        axis=1,
    )
    return table[groups]


def intensity_table(classes: int, rng: np.random.Generator) -> npt.NDArray[np.float64]:
    """Get the per-class intensity of one further modality."""
    groups = np.arange(classes)
    if classes > 2:  # noqa: PLR2004
        groups = np.maximum(groups - 1, 0)
    count = int(groups.max()) + 1
    return rng.permutation(_levels(count))[groups]


def _draw_label(
    rng: np.random.Generator,
    classes: int,
    cells: tuple[int, int],
) -> SegmentationMap:
    rows, cols = cells
    grid_y, grid_x = np.mgrid[0:rows, 0:cols]
    label = np.zeros(cells, dtype=np.int64)
    for _ in range(int(rng.integers(2, 6))):
        cls = int(rng.integers(classes))
        if rng.random() < 0.5:  # noqa: PLR2004
            top, left = int(rng.integers(rows)), int(rng.integers(cols))
            height = int(rng.integers(2, max(3, rows // 2)))
            width = int(rng.integers(2, max(3, cols // 2)))
            label[top : top + height, left : left + width] = cls
        else:
            center_y, center_x = rng.uniform(0, rows), rng.uniform(0, cols)
            radius = rng.uniform(1.5, max(2.0, min(rows, cols) / 3))
            squared = (grid_y + 0.5 - center_y) ** 2 + (grid_x + 0.5 - center_x) ** 2
            label[squared <= radius**2] = cls
    return label


def synth_dataset(  # noqa: PLR0913
    n: int,
    modalities: int,
    classes: int,
    hw: tuple[int, int],
    seed: int,
    *,
    degrade_fraction: float = 0.25,
    channels: tuple[int, ...] | None = None,
) -> list[ModalitySample]:
    """Generate ``n`` seeded samples of ``modalities`` images each.

    ``channels`` defaults to three for modality 0 and one for the others.
    """
    height, width = hw
    if n < 1 or modalities < 1 or classes < MIN_CLASSES_PER_LABEL:
        msg = (
            f"synthetic data needs n >= 1, modalities >= 1 and classes >= 2, "
            f"got {n}, {modalities}, {classes}"
        )
        raise ConfigError(msg)
    if height < 32 or width < 32 or height % 32 or width % 32:  # noqa: PLR2004
        msg = f"synthetic extent {height}x{width} is not a positive multiple of 32"
        raise ConfigError(msg)
    if not 0.0 <= degrade_fraction <= 1.0:
        msg = f"degrade fraction {degrade_fraction} is outside [0, 1]"
        raise ConfigError(msg)
    channels = channels or (3, *([1] * (modalities - 1)))
    if len(channels) != modalities:
        msg = f"{len(channels)} channel counts given for {modalities} modalities"
        raise ConfigError(msg)

    rng = np.random.default_rng(seed)
    colors = color_table(classes)
    intensities = [intensity_table(classes, rng) for _ in range(1, modalities)]
    degraded = set(rng.choice(n, size=round(degrade_fraction * n), replace=False))
    cells = (height // CELL, width // CELL)

    samples = []
    for index in range(n):
        label = _draw_label(rng, classes, cells)
        while np.unique(label).size < MIN_CLASSES_PER_LABEL:
            label = _draw_label(rng, classes, cells)
        label = np.kron(label, np.ones((CELL, CELL), dtype=np.int64))

        if index in degraded:
            first = rng.uniform(size=(channels[0], height, width))
        else:
            color = np.moveaxis(colors[label], -1, 0)
            if channels[0] != color.shape[0]:
                color = np.repeat(color[:1], channels[0], axis=0)
            first = color + rng.normal(0.0, COLOR_NOISE, size=color.shape)
        images = [np.clip(first, 0.0, 1.0)]
        for modality, table in enumerate(intensities, start=1):
            plane = table[label] + rng.normal(0.0, INTENSITY_NOISE, size=label.shape)
            plane = np.clip(plane, 0.0, 1.0)
            images.append(np.repeat(plane[None], channels[modality], axis=0))

        samples.append(
            ModalitySample(
                images=tuple(images),
                label=label,
                name=f"sample{index:04d}",
            ),
        )
    msg = "generated %d samples with %d modalities (%d degraded)"
    logger.info(msg, n, modalities, len(degraded))
    return samples
