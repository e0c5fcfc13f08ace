# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Joint geometric augmentation of modalities and labels."""

import numpy as np
import numpy.typing as npt

from .config import U3M_IGNORE_INDEX
from .ops import interpolation_matrix
from .types import ModalitySample, SegmentationMap, TrainConfig

SCALE_RANGE = (0.75, 1.25)
"""Bounds of the random zoom factor."""


def _resize_image(
    image: npt.NDArray[np.float64],
    height: int,
    width: int,
) -> npt.NDArray[np.float64]:
    rows = interpolation_matrix(image.shape[-2], height)
    cols = interpolation_matrix(image.shape[-1], width)
    return np.matmul(np.matmul(rows, image), cols.T)


def _resize_label(label: SegmentationMap, height: int, width: int) -> SegmentationMap:
    rows = np.minimum(
        ((np.arange(height) + 0.5) * label.shape[0] / height).astype(np.int64),
        label.shape[0] - 1,
    )
    cols = np.minimum(
        ((np.arange(width) + 0.5) * label.shape[1] / width).astype(np.int64),
        label.shape[1] - 1,
    )
    return label[np.ix_(rows, cols)]


def _fit(array: npt.NDArray, height: int, width: int, fill: float) -> npt.NDArray:
    """Center-crop or pad the two trailing axes to ``height x width``."""
    out = np.full((*array.shape[:-2], height, width), fill, dtype=array.dtype)
    src_h, src_w = array.shape[-2:]
    crop_top, crop_left = max(src_h - height, 0) // 2, max(src_w - width, 0) // 2
    pad_top, pad_left = max(height - src_h, 0) // 2, max(width - src_w, 0) // 2
    rows, cols = min(src_h, height), min(src_w, width)
    window = array[..., crop_top : crop_top + rows, crop_left : crop_left + cols]
    out[..., pad_top : pad_top + rows, pad_left : pad_left + cols] = window
    return out


def apply_geometry(
    sample: ModalitySample,
    *,
    flip: bool = False,
    quarter_turns: int = 0,
    scale: float = 1.0,
    ignore_index: int = U3M_IGNORE_INDEX,
) -> ModalitySample:
    """Apply the same flip, rotation and zoom to every modality and the label.

    Rotation by an odd number of quarter turns needs a square sample; on
    other samples it is folded onto the neighbouring half turn so the extent
    never changes. Zoomed images are resampled bilinearly, labels by nearest
    neighbour, and both are cropped or padded back around the center.
    """
    images = list(sample.images)
    label = sample.label
    height, width = sample.shape

    if flip:
        images = [image[..., ::-1] for image in images]
        label = label[:, ::-1]
    turns = quarter_turns % 4
    if height != width:
        turns -= turns % 2
    if turns:
        images = [np.rot90(image, turns, axes=(-2, -1)) for image in images]
        label = np.rot90(label, turns)
    if scale != 1.0:
        zoom_h = max(1, round(height * scale))
        zoom_w = max(1, round(width * scale))
        images = [
            _fit(_resize_image(image, zoom_h, zoom_w), height, width, 0.0)
            for image in images
        ]
        label = _fit(_resize_label(label, zoom_h, zoom_w), height, width, ignore_index)

    return ModalitySample(
        images=tuple(np.ascontiguousarray(image) for image in images),
        label=np.ascontiguousarray(label),
        name=sample.name,
    )


def augment(
    sample: ModalitySample,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> ModalitySample:
    """Draw one random geometry and apply it.

    The three draws are always taken, disabled augmentations just ignore
    them, so the random stream does not depend on the flags.
    """
    flip = bool(rng.random() < 0.5)  # noqa: PLR2004
    turns = int(rng.integers(4))
    scale = float(rng.uniform(*SCALE_RANGE))
    return apply_geometry(
        sample,
        flip=flip and cfg.hflip,
        quarter_turns=turns if cfg.rotate else 0,
        scale=scale if cfg.scale else 1.0,
        ignore_index=cfg.ignore_index,
    )
