# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Dataset directories.

A split is laid out as ``<root>/<split>/<sample>/`` holding ``mod<k>.ppm``
(color) or ``mod<k>.pgm`` (gray) for every modality ``k`` and a gray
``label.pgm`` whose values are class indices, ``255`` marks ignored pixels.
"""

import logging
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .config import U3M_IGNORE_INDEX
from .errors import DataError, FormatError, ShapeError
from .netpbm import read_image, write_image
from .tensor import Tensor
from .types import ModalitySample, SegmentationMap

logger = logging.getLogger(__name__)

LABEL_FILE = "label.pgm"
EXTENSIONS = (".ppm", ".pgm")
ALIGNMENT = 32


def modality_file(sample_dir: Path, modality: int) -> Path | None:
    """Find the image of ``modality`` in ``sample_dir``."""
    for extension in EXTENSIONS:
        path = sample_dir / f"mod{modality}{extension}"
        if path.is_file():
            return path
    return None


def _planes(raster: npt.NDArray[np.uint8]) -> npt.NDArray[np.float64]:
    gray = raster.ndim == 2  # noqa: PLR2004
    planes = raster[None] if gray else np.moveaxis(raster, -1, 0)
    return planes.astype(np.float64) / 255.0


def pad_to_multiple(
    sample: ModalitySample,
    multiple: int = ALIGNMENT,
    ignore_index: int = U3M_IGNORE_INDEX,
) -> ModalitySample:
    """Pad bottom and right to a multiple of ``multiple``.

    Images replicate their edge pixels, the label is padded with
    ``ignore_index`` so padding never counts in loss or metrics.
    """
    height, width = sample.shape
    pad_h, pad_w = -height % multiple, -width % multiple
    if not pad_h and not pad_w:
        return sample
    images = tuple(
        np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
        for image in sample.images
    )
    label = np.pad(
        sample.label,
        ((0, pad_h), (0, pad_w)),
        mode="constant",
        constant_values=ignore_index,
    )
    return ModalitySample(images=images, label=label, name=sample.name)


def load_sample(
    sample_dir: Path,
    modalities: int | None = None,
    num_classes: int | None = None,
    ignore_index: int = U3M_IGNORE_INDEX,
) -> ModalitySample:
    """Load one sample directory."""
    name = sample_dir.name
    images = []
    modality = 0
    while modalities is None or modality < modalities:
        path = modality_file(sample_dir, modality)
        if path is None:
            if modalities is None and modality > 0:
                break
            msg = f"sample {name}: mod{modality}.ppm (or .pgm) is missing"
            raise DataError(msg)
        try:
            images.append(_planes(read_image(path)))
        except FormatError as error:
            msg = f"sample {name}: {error}"
            raise DataError(msg) from error
        modality += 1

    label_path = sample_dir / LABEL_FILE
    if not label_path.is_file():
        msg = f"sample {name}: {LABEL_FILE} is missing"
        raise DataError(msg)
    try:
        label = read_image(label_path)
    except FormatError as error:
        msg = f"sample {name}: {error}"
        raise DataError(msg) from error
    if label.ndim != 2:  # noqa: PLR2004
        msg = f"sample {name}: {LABEL_FILE} must be a gray image"
        raise DataError(msg)
    label = label.astype(np.int64)

    for index, image in enumerate(images):
        if image.shape[-2:] != label.shape:
            msg = (
                f"sample {name}: mod{index} is {image.shape[-2]}x{image.shape[-1]}, "
                f"the label is {label.shape[0]}x{label.shape[1]}"
            )
            raise DataError(msg)
    if num_classes is not None:
        invalid = (label >= num_classes) & (label != ignore_index)
        if invalid.any():
            value = int(label[invalid][0])
            msg = f"sample {name}: label {value} is not one of {num_classes} classes"
            raise DataError(msg)
    return ModalitySample(images=tuple(images), label=label, name=name)


def load_dataset_dir(  # noqa: PLR0913
    root: Path,
    split: str,
    *,
    modalities: int | None = None,
    num_classes: int | None = None,
    pad_to_32: bool = False,
    ignore_index: int = U3M_IGNORE_INDEX,
) -> list[ModalitySample]:
    """Load every sample of ``split``, ordered by directory name.

    Modalities are read in ascending ``k`` and scaled to ``[0, 1]``. Extents
    that are not a multiple of 32 are rejected unless ``pad_to_32``.
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        msg = f"dataset split {split_dir} does not exist"
        raise DataError(msg)
    sample_dirs = sorted(path for path in split_dir.iterdir() if path.is_dir())
    if not sample_dirs:
        msg = f"dataset split {split_dir} holds no samples"
        raise DataError(msg)

    samples = []
    for sample_dir in sample_dirs:
        sample = load_sample(sample_dir, modalities, num_classes, ignore_index)
        if modalities is None:
            modalities = len(sample.images)
        elif len(sample.images) != modalities:
            msg = f"sample {sample.name} has {len(sample.images)} modalities"
            raise DataError(msg)
        height, width = sample.shape
        if height % ALIGNMENT or width % ALIGNMENT:
            if not pad_to_32:
                msg = (
                    f"sample {sample.name}: {height}x{width} is not a multiple "
                    f"of {ALIGNMENT}, enable pad_to_32 to pad it"
                )
                raise DataError(msg)
            sample = pad_to_multiple(sample, ALIGNMENT, ignore_index)
        samples.append(sample)

    msg = "loaded %d samples with %d modalities from %s"
    logger.info(msg, len(samples), modalities, split_dir)
    return samples


def write_dataset_dir(root: Path, split: str, samples: list[ModalitySample]) -> Path:
    """Write ``samples`` in the layout read by :func:`load_dataset_dir`."""
    split_dir = Path(root) / split
    for index, sample in enumerate(samples):
        sample_dir = split_dir / (sample.name or f"sample{index:04d}")
        sample_dir.mkdir(parents=True, exist_ok=True)
        for modality, image in enumerate(sample.images):
            raster = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
            if raster.shape[0] == 1:
                write_image(sample_dir / f"mod{modality}.pgm", raster[0])
            elif raster.shape[0] == 3:  # noqa: PLR2004
                color = np.moveaxis(raster, 0, -1)
                write_image(sample_dir / f"mod{modality}.ppm", color)
            else:
                msg = f"sample {sample.name}: cannot store {raster.shape[0]} channels"
                raise DataError(msg)
        if sample.label.min() < 0 or sample.label.max() > 255:  # noqa: PLR2004
            msg = f"sample {sample.name}: label values do not fit a gray image"
            raise DataError(msg)
        write_image(sample_dir / LABEL_FILE, sample.label.astype(np.uint8))
    msg = "wrote %d samples to %s"
    logger.info(msg, len(samples), split_dir)
    return split_dir


def select_modalities(
    samples: list[ModalitySample],
    indices: tuple[int, ...],
) -> list[ModalitySample]:
    """Keep the modalities ``indices``, in that order."""
    selected = []
    for sample in samples:
        if max(indices) >= len(sample.images):
            msg = f"sample {sample.name} has no modality {max(indices)}"
            raise DataError(msg)
        images = tuple(sample.images[index] for index in indices)
        selected.append(ModalitySample(images, sample.label, sample.name))
    return selected


def stack_batch(samples: list[ModalitySample]) -> tuple[list[Tensor], SegmentationMap]:
    """Stack samples into per-modality ``[B,C,H,W]`` tensors and ``[B,H,W]`` labels."""
    if not samples:
        msg = "cannot stack an empty batch"
        raise ShapeError(msg)
    shapes = {tuple(image.shape for image in sample.images) for sample in samples}
    if len(shapes) != 1:
        msg = f"batch mixes sample layouts {sorted(shapes)}"
        raise ShapeError(msg)
    images = [
        Tensor(np.stack([sample.images[modality] for sample in samples]), copy=False)
        for modality in range(len(samples[0].images))
    ]
    labels = np.stack([sample.label for sample in samples])
    return images, labels
