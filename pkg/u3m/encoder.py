# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Hierarchical mix-transformer encoder.

One encoder is built per modality. Each of the four stages embeds the
previous map with an overlapping strided convolution and runs pre-norm
transformer blocks made of spatial-reduction attention and a Mix-FFN whose
depthwise 3x3 convolution supplies positional information.
"""

import math
from collections.abc import Iterator

from . import ops
from .config import U3M_LAYER_NORM_EPS
from .errors import ConfigError, ShapeError
from .params import Initializer, ParamScope
from .tensor import Tensor
from .types import NUM_STAGES, EncoderConfig, StagePyramid


def overlap_patch_embed(
    x: Tensor,
    stage: int,
    cfg: EncoderConfig,
    params: ParamScope,
) -> Tensor:
    """Embed ``x[B,C,H,W]`` into the ``stage`` map ``[B,C_i,H/s,W/s]``.

    The kernel overlaps its neighbours (7/4/3 on stage 1, 3/2/1 after), the
    result is layer-normalized over channels.
    """
    index = stage - 1
    kernel, stride = cfg.patch_sizes[index], cfg.strides[index]
    height, width = x.shape[-2:]
    if height % stride or width % stride:
        msg = f"stage {stage}: input {height}x{width} is not divisible by {stride}"
        raise ShapeError(msg)
    embedded = ops.conv2d(
        x,
        params["proj.w"],
        params["proj.b"],
        stride=stride,
        pad=kernel // 2,
        exact=False,
    )
    return ops.channel_layer_norm(
        embedded,
        params["norm.gamma"],
        params["norm.beta"],
        U3M_LAYER_NORM_EPS,
    )


def spatial_reduce(x: Tensor, ratio: int, params: ParamScope) -> Tensor:
    """Shorten ``x[B,N,C]`` to ``[B,N/R,C]``.

    Groups of ``R`` consecutive tokens are concatenated to ``C*R`` features
    and projected back to ``C``. The projection is followed by a layer norm
    when the scope holds one.
    """
    batch, tokens, channels = x.shape
    if tokens % ratio:
        msg = f"sequence of {tokens} tokens is not divisible by the ratio {ratio}"
        raise ShapeError(msg)
    grouped = ops.reshape(x, (batch, tokens // ratio, channels * ratio))
    reduced = ops.linear(grouped, params["w"], params["b"])
    if "norm.gamma" not in params:
        return reduced
    return ops.layer_norm(
        reduced,
        params["norm.gamma"],
        params["norm.beta"],
        U3M_LAYER_NORM_EPS,
    )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, tokens, channels = x.shape
    per_head = ops.reshape(x, (batch, tokens, heads, channels // heads))
    return ops.transpose(per_head, (0, 2, 1, 3))


def mhsa(
    x: Tensor,
    params: ParamScope,
    heads: int,
    ratio: int,
    *,
    return_attention: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Multi-head self-attention with a spatially reduced key/value path.

    Queries come from every token, keys and values from the sequence
    shortened by ``ratio`` (no reduction at ``ratio == 1``). Heads are
    concatenated and mixed by the output projection.
    """
    batch, tokens, channels = x.shape
    if channels % heads:
        msg = f"{channels} channels cannot be split into {heads} heads"
        raise ShapeError(msg)
    head_dim = channels // heads

    source = spatial_reduce(x, ratio, params.scope("sr")) if ratio > 1 else x
    query = _split_heads(ops.linear(x, params["wq"], params["bq"]), heads)
    key = _split_heads(ops.linear(source, params["wk"], params["bk"]), heads)
    value = _split_heads(ops.linear(source, params["wv"], params["bv"]), heads)

    scores = ops.matmul(query, ops.transpose(key, (0, 1, 3, 2)))
    attention = ops.softmax(scores / math.sqrt(head_dim), axis=-1)
    context = ops.transpose(ops.matmul(attention, value), (0, 2, 1, 3))
    merged = ops.reshape(context, (batch, tokens, channels))
    out = ops.linear(merged, params["wo"], params["bo"])
    if return_attention:
        return out, attention
    return out


def mix_ffn(x: Tensor, params: ParamScope, height: int, width: int) -> Tensor:
    """Feed-forward block with a depthwise 3x3 convolution and a residual."""
    tokens = x.shape[1]
    if tokens != height * width:
        msg = f"{tokens} tokens do not form a {height}x{width} map"
        raise ShapeError(msg)
    hidden = ops.linear(x, params["fc1.w"], params["fc1.b"])
    mixed = ops.conv2d(
        ops.unflatten_tokens(hidden, height, width),
        params["dw.w"],
        params["dw.b"],
        stride=1,
        pad=1,
        groups=hidden.shape[-1],
    )
    activated = ops.flatten_tokens(ops.gelu(mixed))
    return ops.linear(activated, params["fc2.w"], params["fc2.b"]) + x


def encode(image: Tensor, cfg: EncoderConfig, params: ParamScope) -> StagePyramid:
    """Run one modality through the four stages."""
    height, width = image.shape[-2:]
    factor = cfg.downsampling(NUM_STAGES)
    if height % factor or width % factor:
        msg = f"input {height}x{width} is not divisible by {factor}"
        raise ShapeError(msg)
    if image.shape[1] != cfg.in_channels:
        msg = f"encoder expects {cfg.in_channels} channels, got {image.shape[1]}"
        raise ShapeError(msg)

    features = []
    x = image
    for stage in range(1, NUM_STAGES + 1):
        stage_params = params.scope(f"stage{stage}")
        embedded = overlap_patch_embed(x, stage, cfg, stage_params.scope("embed"))
        stage_h, stage_w = embedded.shape[-2:]
        tokens = ops.flatten_tokens(embedded)
        for block in range(1, cfg.stage_depths[stage - 1] + 1):
            block_params = stage_params.scope(f"block{block}")
            normed = ops.layer_norm(
                tokens,
                block_params["norm1.gamma"],
                block_params["norm1.beta"],
                U3M_LAYER_NORM_EPS,
            )
            tokens = tokens + mhsa(
                normed,
                block_params.scope("attn"),
                cfg.heads[stage - 1],
                cfg.sr_ratios[stage - 1],
            )
            normed = ops.layer_norm(
                tokens,
                block_params["norm2.gamma"],
                block_params["norm2.beta"],
                U3M_LAYER_NORM_EPS,
            )
            # the Mix-FFN residual adds the normed tokens, not the stream
            tokens = mix_ffn(normed, block_params.scope("ffn"), stage_h, stage_w)
        x = ops.unflatten_tokens(tokens, stage_h, stage_w)
        features.append(x)
    return StagePyramid(tuple(features))


def init_encoder(init: Initializer, params: ParamScope, cfg: EncoderConfig) -> None:
    """Register every parameter of one encoder below ``params``."""
    in_channels = cfg.in_channels
    for stage in range(1, NUM_STAGES + 1):
        index = stage - 1
        channels = cfg.stage_channels[index]
        stage_params = params.scope(f"stage{stage}")
        embed = stage_params.scope("embed")
        init.conv(embed.scope("proj"), channels, in_channels, cfg.patch_sizes[index])
        init.norm(embed.scope("norm"), channels)
        hidden = channels * cfg.mlp_ratio
        for block in range(1, cfg.stage_depths[index] + 1):
            block_params = stage_params.scope(f"block{block}")
            init.norm(block_params.scope("norm1"), channels)
            attn = block_params.scope("attn")
            for head in ("q", "k", "v", "o"):
                init.linear(
                    attn,
                    channels,
                    channels,
                    weight=f"w{head}",
                    bias=f"b{head}",
                )
            ratio = cfg.sr_ratios[index]
            if ratio > 1:
                init.linear(attn.scope("sr"), channels * ratio, channels)
                init.norm(attn.scope("sr").scope("norm"), channels)
            init.norm(block_params.scope("norm2"), channels)
            ffn = block_params.scope("ffn")
            init.linear(ffn.scope("fc1"), channels, hidden)
            init.conv(ffn.scope("dw"), hidden, hidden, 3, groups=hidden)
            init.linear(ffn.scope("fc2"), hidden, channels)
        in_channels = channels


def encoder_violations(
    cfg: EncoderConfig,
    height: int,
    width: int,
) -> Iterator[tuple[str, str]]:
    """Yield ``(key, message)`` for every violated divisibility invariant."""
    lists = {
        "stage_channels": cfg.stage_channels,
        "stage_depths": cfg.stage_depths,
        "heads": cfg.heads,
        "sr_ratios": cfg.sr_ratios,
        "patch_sizes": cfg.patch_sizes,
        "strides": cfg.strides,
    }
    for key, values in lists.items():
        if len(values) != NUM_STAGES:
            yield key, f"needs {NUM_STAGES} entries, got {len(values)}"
            return
        if min(values) < 1:
            yield key, f"entries must be positive, got {values}"
            return
    factor = cfg.downsampling(NUM_STAGES)
    if height % factor or width % factor:
        yield "strides", f"input {height}x{width} is not divisible by {factor}"
        return
    for index in range(NUM_STAGES):
        stage = index + 1
        channels, heads = cfg.stage_channels[index], cfg.heads[index]
        if channels % heads:
            yield "heads", f"stage {stage}: {channels} channels, {heads} heads"
        if cfg.patch_sizes[index] % 2 == 0:
            yield "patch_sizes", f"stage {stage}: {cfg.patch_sizes[index]} is even"
        stage_h, stage_w = cfg.stage_extent(stage, height, width)
        tokens, ratio = stage_h * stage_w, cfg.sr_ratios[index]
        if tokens % ratio:
            msg = f"stage {stage}: {tokens} tokens not divisible by {ratio}"
            yield "sr_ratios", msg


def check_encoder_config(cfg: EncoderConfig, height: int, width: int) -> None:
    """Reject configurations violating a divisibility invariant."""
    for key, message in encoder_violations(cfg, height, width):
        msg = f"encoder {key}: {message}"
        raise ConfigError(msg)
