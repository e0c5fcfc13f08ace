# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Intersection-over-union metrics.

Pixel counts are accumulated in a 64-bit integer confusion matrix, floats
only appear in the final division. Classes that neither occur in the ground
truth nor in the prediction have no IoU and are left out of the mean.

>>> cm = ConfusionMatrix(2)
>>> _ = cm.update(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [1, 1]]))
>>> print(format_table(cm, ("a", "b")).splitlines()[-1])
50.0 66.7 | 58.3
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .config import U3M_IGNORE_INDEX
from .errors import ConfigError, DataError, MetricError, ShapeError
from .types import SegmentationMap

UNDEFINED = "—"
"""Table cell of a class without IoU."""


@dataclass
class ConfusionMatrix:
    """Pixel counts, rows are ground truth classes, columns predictions."""

    num_classes: int
    counts: npt.NDArray[np.int64] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        """Start from zero counts."""
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            msg = f"counts {self.counts.shape} do not fit {self.num_classes} classes"
            raise ShapeError(msg)

    @property
    def total(self) -> int:
        """Number of evaluated pixels."""
        return int(self.counts.sum())

    def update(
        self,
        pred: SegmentationMap,
        gt: SegmentationMap,
        ignore_index: int = U3M_IGNORE_INDEX,
    ) -> "ConfusionMatrix":
        """Count every pixel whose ground truth is not ``ignore_index``."""
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            msg = f"prediction {pred.shape} and ground truth {gt.shape} differ"
            raise ShapeError(msg)
        valid = gt != ignore_index
        for name, values in (("ground truth", gt), ("prediction", pred)):
            outside = valid & ((values < 0) | (values >= self.num_classes))
            if outside.any():
                pixel = tuple(int(index) for index in np.argwhere(outside)[0])
                msg = (
                    f"{name} class {values[pixel]} at pixel {pixel} is not one "
                    f"of {self.num_classes} classes"
                )
                raise DataError(msg)
        flat = self.num_classes * gt[valid].astype(np.int64) + pred[valid]
        counts = np.bincount(flat, minlength=self.num_classes**2)
        self.counts += counts.reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Get the elementwise sum with ``other``."""
        if other.num_classes != self.num_classes:
            msg = f"cannot merge {other.num_classes} into {self.num_classes} classes"
            raise ShapeError(msg)
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def update_confusion(
    cm: ConfusionMatrix,
    pred: SegmentationMap,
    gt: SegmentationMap,
    ignore_index: int = U3M_IGNORE_INDEX,
) -> ConfusionMatrix:
    """Add one prediction to ``cm``."""
    return cm.update(pred, gt, ignore_index)


def iou_per_class(cm: ConfusionMatrix) -> npt.NDArray[np.float64]:
    """Get TP / (TP + FP + FN) per class, ``nan`` where the union is empty."""
    intersection = np.diag(cm.counts)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - intersection
    iou = np.full(cm.num_classes, np.nan)
    defined = union > 0
    iou[defined] = intersection[defined] / union[defined]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    """Mean over the classes that have an IoU."""
    iou = iou_per_class(cm)
    defined = iou[~np.isnan(iou)]
    if defined.size == 0:
        msg = "no class occurs in ground truth or prediction"
        raise MetricError(msg)
    return float(defined.mean())


def _cells(cm: ConfusionMatrix) -> list[str]:
    return [
        UNDEFINED if np.isnan(value) else f"{100 * value:.1f}"
        for value in iou_per_class(cm)
    ]


def format_table(cm: ConfusionMatrix, class_names: tuple[str, ...]) -> str:
    """Render per-class IoU and the mean in percent as a two-line table."""
    if len(class_names) != cm.num_classes:
        msg = f"{len(class_names)} class names given for {cm.num_classes} classes"
        raise ConfigError(msg)
    cells = [*_cells(cm), f"{100 * miou(cm):.1f}"]
    names = [*class_names, "mIoU"]
    pairs = zip(names, cells, strict=True)
    widths = [max(len(name), len(cell)) for name, cell in pairs]

    def row(values: list[str]) -> str:
        pairs = zip(values, widths, strict=True)
        padded = [value.rjust(width) for value, width in pairs]
        return " ".join(padded[:-1]) + " | " + padded[-1]

    return f"{row(names)}\n{row(cells)}"


def write_table_csv(
    cm: ConfusionMatrix,
    class_names: tuple[str, ...],
    path: Path,
) -> None:
    """Write ``class,iou`` rows in percent followed by the mean."""
    if len(class_names) != cm.num_classes:
        msg = f"{len(class_names)} class names given for {cm.num_classes} classes"
        raise ConfigError(msg)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["class", "iou"])
        for name, cell in zip(class_names, _cells(cm), strict=True):
            writer.writerow([name, "" if cell == UNDEFINED else cell])
        writer.writerow(["mIoU", f"{100 * miou(cm):.1f}"])
