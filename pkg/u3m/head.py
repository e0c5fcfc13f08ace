# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Shared MLP segmentation head."""

import numpy as np

from . import ops
from .errors import ShapeError
from .params import Initializer, ParamScope
from .tensor import Array, Tensor
from .types import NUM_STAGES, HeadConfig, SegmentationMap


def stage_project(feature: Tensor, params: ParamScope) -> Tensor:
    """Project ``[B,C_i,H_i,W_i]`` to the common width ``[B,D,H_i,W_i]``."""
    return ops.pointwise(feature, params["w"], params["b"])


def decode(
    stages: list[Tensor],
    params: ParamScope,
    cfg: HeadConfig,
    full_hw: tuple[int, int],
) -> Tensor:
    """Turn the four fused stages into logits ``[B,N,H,W]``.

    Every stage is projected and upsampled to 1/4 of the input, the four
    maps are concatenated and fused, classified, and the logits are
    upsampled to the input resolution.
    """
    if len(stages) != NUM_STAGES:
        msg = f"decode needs {NUM_STAGES} stages, got {len(stages)}"
        raise ShapeError(msg)
    height, width = full_hw
    quarter_h, quarter_w = stages[0].shape[-2:]
    if (quarter_h * 4, quarter_w * 4) != (height, width):
        msg = f"first stage {quarter_h}x{quarter_w} is not 1/4 of {height}x{width}"
        raise ShapeError(msg)
    for index, stage in enumerate(stages):
        expected = (quarter_h >> index, quarter_w >> index)
        if stage.shape[-2:] != expected or (expected[0] << index) != quarter_h:
            extent = stage.shape[-2:]
            msg = f"stage {index + 1} has extent {extent}, expected {expected}"
            raise ShapeError(msg)

    projected = [
        ops.bilinear_upsample(
            stage_project(stage, params.scope(f"proj{index + 1}")),
            quarter_h,
            quarter_w,
        )
        for index, stage in enumerate(stages)
    ]
    fused = ops.pointwise(
        ops.concat(projected, axis=1),
        params["fuse.w"],
        params["fuse.b"],
    )
    logits = ops.pointwise(fused, params["cls.w"], params["cls.b"])
    if logits.shape[1] != cfg.num_classes:
        msg = f"head emits {logits.shape[1]} classes, expected {cfg.num_classes}"
        raise ShapeError(msg)
    return ops.bilinear_upsample(logits, height, width)


def predict_labels(logits: Tensor | Array) -> SegmentationMap:
    """Per-pixel argmax over classes, ties resolve to the smallest index."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(values, axis=1).astype(np.int64)


def init_head(
    init: Initializer,
    params: ParamScope,
    cfg: HeadConfig,
    stage_channels: tuple[int, ...],
) -> None:
    """Register the head parameters below ``params``."""
    for index, channels in enumerate(stage_channels):
        init.linear(params.scope(f"proj{index + 1}"), channels, cfg.decoder_dim)
    init.linear(params.scope("fuse"), NUM_STAGES * cfg.decoder_dim, cfg.decoder_dim)
    init.linear(params.scope("cls"), cfg.decoder_dim, cfg.num_classes)
