# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Unbiased multiscale fusion of modality features.

Every modality enters the block through the same concatenation and the
same channel reduction; no branch is reserved for a particular modality.
A preference for one modality can therefore only come from learned
weights, never from the layout. Permuting the modalities together with the
matching row blocks of the reduction weight leaves the output unchanged.
"""

import logging

from . import ops
from .errors import ConfigError, FusionError, ShapeError
from .params import Initializer, ParamScope
from .tensor import Tensor
from .types import FusedStage, FusionConfig

logger = logging.getLogger(__name__)

VARIANTS = ("full", "linear", "linear_ca", "linear_pool")
"""Supported fusion layouts, ``full`` is the complete block."""


def concat_reduce(feats: list[Tensor], params: ParamScope) -> Tensor:
    """Concatenate M features along channels and reduce ``M*C`` to ``C``."""
    if not feats:
        msg = "fusion needs at least one modality"
        raise FusionError(msg)
    reference = feats[0].shape
    for index, feat in enumerate(feats):
        if feat.shape != reference:
            msg = (
                f"modality {index} feature has shape {feat.shape}, "
                f"modality 0 has {reference}"
            )
            raise FusionError(msg)
    stacked = feats[0] if len(feats) == 1 else ops.concat(feats, axis=1)
    return ops.pointwise(stacked, params["w"], params["b"])


def pyramid_pool_fuse(f: Tensor, params: ParamScope, bins: tuple[int, ...]) -> Tensor:
    """Aggregate context over adaptive pools of several bin counts.

    The projected feature is pooled to each ``k x k`` grid, projected,
    upsampled back and summed before a final projection.
    """
    height, width = f.shape[-2:]
    projected = ops.pointwise(f, params["proj.w"], params["proj.b"])
    total = None
    for size in bins:
        if size > min(height, width):
            msg = f"pool bin {size} exceeds the {height}x{width} feature map"
            raise ShapeError(msg)
        branch = params.scope(f"bin{size}")
        pooled = ops.pointwise(
            ops.adaptive_avg_pool2d(projected, size),
            branch["w"],
            branch["b"],
        )
        upsampled = ops.bilinear_upsample(pooled, height, width)
        total = upsampled if total is None else total + upsampled
    return ops.pointwise(total, params["out.w"], params["out.b"])


def pyramid_conv_fuse(
    f: Tensor,
    params: ParamScope,
    kernels: tuple[int, ...],
) -> Tensor:
    """Sum residual depthwise convolutions of several odd kernel sizes."""
    projected = ops.pointwise(f, params["proj.w"], params["proj.b"])
    channels = projected.shape[1]
    total = None
    for size in kernels:
        if size % 2 == 0:
            msg = f"convolution kernel {size} must be odd"
            raise ConfigError(msg)
        branch = params.scope(f"k{size}")
        convolved = ops.conv2d(
            projected,
            branch["w"],
            branch["b"],
            stride=1,
            pad=size // 2,
            groups=channels,
        )
        term = projected + convolved
        total = term if total is None else total + term
    return ops.pointwise(total, params["out.w"], params["out.b"])


def channel_attention(
    x: Tensor,
    params: ParamScope,
    reduction: int,
    *,
    return_gate: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Reweight channels by a squeeze-excite gate in ``(0, 1)``."""
    batch, channels = x.shape[:2]
    if channels % reduction:
        msg = f"{channels} channels are not divisible by the reduction {reduction}"
        raise ConfigError(msg)
    squeezed = ops.mean(x, axis=(2, 3))
    hidden = ops.relu(ops.linear(squeezed, params["fc1.w"], params["fc1.b"]))
    gate = ops.sigmoid(ops.linear(hidden, params["fc2.w"], params["fc2.b"]))
    out = x * ops.reshape(gate, (batch, channels, 1, 1))
    if return_gate:
        return out, gate
    return out


def fusion_block(
    feats: list[Tensor],
    params: ParamScope,
    cfg: FusionConfig,
    bins: tuple[int, ...] | None = None,
) -> FusedStage:
    """Fuse the M modality features of one stage.

    ``bins`` overrides ``cfg.pool_bins``, see :func:`stage_pool_bins`.
    """
    bins = cfg.pool_bins if bins is None else bins
    reduced = concat_reduce(feats, params.scope("concat"))
    linear = params.scope("linear")
    if cfg.variant == "full":
        mixed = pyramid_pool_fuse(reduced, params.scope("pool"), bins)
        mixed = mixed + pyramid_conv_fuse(
            reduced,
            params.scope("conv"),
            cfg.conv_kernels,
        )
    elif cfg.variant == "linear_pool":
        mixed = pyramid_pool_fuse(reduced, params.scope("pool"), bins)
    elif cfg.variant in ("linear", "linear_ca"):
        mixed = reduced
    else:
        msg = f"unknown fusion variant {cfg.variant!r}, expected one of {VARIANTS}"
        raise ConfigError(msg)
    out = ops.pointwise(mixed, linear["w"], linear["b"])
    if cfg.variant in ("full", "linear_ca"):
        out = channel_attention(out, params.scope("ca"), cfg.ca_reduction)
    return FusedStage(out)


def stage_pool_bins(cfg: FusionConfig, height: int, width: int) -> tuple[int, ...]:
    """Select the pool bins usable on a ``height x width`` stage.

    In ``clip`` mode bins larger than the stage are dropped, in ``strict``
    mode they are a configuration error.
    """
    fitting = tuple(size for size in cfg.pool_bins if size <= min(height, width))
    dropped = tuple(size for size in cfg.pool_bins if size not in fitting)
    if dropped and cfg.pool_bins_mode == "strict":
        msg = f"pool bins {dropped} exceed a {height}x{width} stage"
        raise ConfigError(msg)
    if not fitting:
        msg = f"no pool bin of {cfg.pool_bins} fits a {height}x{width} stage"
        raise ConfigError(msg)
    if dropped:
        msg = "pool bins %s dropped on a %dx%d stage"
        logger.warning(msg, dropped, height, width)
    return fitting


def init_fusion(  # noqa: PLR0913
    init: Initializer,
    params: ParamScope,
    cfg: FusionConfig,
    channels: int,
    modalities: int,
    bins: tuple[int, ...],
) -> None:
    """Register the parameters of one fusion block below ``params``."""
    init.linear(params.scope("concat"), modalities * channels, channels)
    if cfg.variant in ("full", "linear_pool"):
        pool = params.scope("pool")
        init.linear(pool.scope("proj"), channels, channels)
        for size in bins:
            init.linear(pool.scope(f"bin{size}"), channels, channels)
        init.linear(pool.scope("out"), channels, channels)
    if cfg.variant == "full":
        conv = params.scope("conv")
        init.linear(conv.scope("proj"), channels, channels)
        for size in cfg.conv_kernels:
            init.conv(conv.scope(f"k{size}"), channels, channels, size, groups=channels)
        init.linear(conv.scope("out"), channels, channels)
    init.linear(params.scope("linear"), channels, channels)
    if cfg.variant in ("full", "linear_ca"):
        ca = params.scope("ca")
        init.linear(ca.scope("fc1"), channels, channels // cfg.ca_reduction)
        init.linear(ca.scope("fc2"), channels // cfg.ca_reduction, channels)
