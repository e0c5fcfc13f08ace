# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Fusion block tests."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from u3m.errors import ConfigError, FusionError, ShapeError
from u3m.fusion import (
    VARIANTS,
    channel_attention,
    fusion_block,
    init_fusion,
    pyramid_conv_fuse,
    pyramid_pool_fuse,
    stage_pool_bins,
)
from u3m.params import Initializer, ParameterStore, ParamScope
from u3m.tensor import Tensor
from u3m.types import FusionConfig

CHANNELS = 8
BINS = (1, 2, 3, 6)


def _block(
    modalities: int,
    cfg: FusionConfig,
    seed: int = 0,
) -> tuple[ParameterStore, ParamScope]:
    store = ParameterStore()
    init = Initializer(store, np.random.default_rng(seed), 0.2)
    scope = store.scope("fusion")
    init_fusion(init, scope, cfg, CHANNELS, modalities, cfg.pool_bins)
    return store, scope


def _features(rng: np.random.Generator, modalities: int) -> list[Tensor]:
    return [Tensor(rng.normal(size=(2, CHANNELS, 6, 6))) for _ in range(modalities)]


def test_fused_stage_keeps_modality_shape(rng: np.random.Generator) -> None:
    """Every variant returns a map shaped like one modality feature."""
    for variant in VARIANTS:
        cfg = FusionConfig(variant=variant)
        _, scope = _block(3, cfg)
        fused = fusion_block(_features(rng, 3), scope, cfg)
        assert fused.tensor.shape == (2, CHANNELS, 6, 6)


def test_modality_permutation_is_unbiased() -> None:
    """Permuting modalities and the reduction row blocks keeps the output."""
    cfg = FusionConfig()
    for trial in range(50):
        rng = np.random.default_rng(trial)
        modalities = 2 + trial % 3
        store, scope = _block(modalities, cfg, seed=trial)
        feats = _features(rng, modalities)
        reference = fusion_block(feats, scope, cfg).tensor.data

        order = rng.permutation(modalities)
        blocks = store["fusion.concat.w"].data.reshape(modalities, CHANNELS, CHANNELS)
        store.assign("fusion.concat.w", blocks[order].reshape(-1, CHANNELS))
        permuted = fusion_block([feats[index] for index in order], scope, cfg)
        assert np.abs(permuted.tensor.data - reference).max() < 1e-10  # noqa: PLR2004


def test_mismatched_modalities_name_the_index(rng: np.random.Generator) -> None:
    """A feature with another shape is reported by its modality index."""
    cfg = FusionConfig()
    _, scope = _block(2, cfg)
    feats = [_features(rng, 1)[0], Tensor(np.zeros((2, CHANNELS, 3, 3)))]
    with pytest.raises(FusionError, match="modality 1"):
        fusion_block(feats, scope, cfg)


def test_conv_fuse_with_zero_kernels_is_residual_sum(
    rng: np.random.Generator,
) -> None:
    """Zero depthwise kernels and identity projections give K times the input."""
    cfg = FusionConfig()
    store, scope = _block(1, cfg)
    conv = scope.scope("conv")
    store.assign(conv.name("proj.w"), np.eye(CHANNELS))
    store.assign(conv.name("out.w"), np.eye(CHANNELS))
    for size in cfg.conv_kernels:
        name = conv.name(f"k{size}.w")
        store.assign(name, np.zeros(store[name].shape))
    f = Tensor(rng.normal(size=(1, CHANNELS, 6, 6)))
    out = pyramid_conv_fuse(f, conv, cfg.conv_kernels)
    assert_array_equal(out.data, len(cfg.conv_kernels) * f.data)


def test_pool_fuse_rejects_oversized_bins(rng: np.random.Generator) -> None:
    """A bin larger than the map is a shape error."""
    cfg = FusionConfig()
    _, scope = _block(1, cfg)
    small = Tensor(rng.normal(size=(1, CHANNELS, 2, 2)))
    with pytest.raises(ShapeError):
        pyramid_pool_fuse(small, scope.scope("pool"), BINS)
    assert pyramid_pool_fuse(small, scope.scope("pool"), (1, 2)).shape == small.shape


def test_pool_fuse_keeps_constant_maps_constant(rng: np.random.Generator) -> None:
    """A spatially constant input gives a spatially constant output."""
    cfg = FusionConfig()
    _, scope = _block(1, cfg)
    levels = rng.normal(size=(2, CHANNELS, 1, 1))
    flat = Tensor(np.broadcast_to(levels, (2, CHANNELS, 6, 6)))
    out = pyramid_pool_fuse(flat, scope.scope("pool"), BINS).data
    spread = out.max(axis=(2, 3)) - out.min(axis=(2, 3))
    assert spread.max() < 1e-12  # noqa: PLR2004


def test_channel_gate_is_open_interval(rng: np.random.Generator) -> None:
    """Gates lie strictly between zero and one."""
    cfg = FusionConfig()
    _, scope = _block(1, cfg)
    x = Tensor(rng.normal(size=(2, CHANNELS, 4, 4)))
    out, gate = channel_attention(x, scope.scope("ca"), 4, return_gate=True)
    assert gate.shape == (2, CHANNELS)
    assert ((gate.data > 0) & (gate.data < 1)).all()
    assert out.shape == x.shape
    with pytest.raises(ConfigError):
        channel_attention(x, scope.scope("ca"), 3)


def test_channel_attention_never_amplifies(rng: np.random.Generator) -> None:
    """Every output value is at most as large as its input in magnitude."""
    cfg = FusionConfig()
    _, scope = _block(1, cfg, seed=5)
    x = Tensor(rng.normal(scale=3.0, size=(3, CHANNELS, 5, 5)))
    out = channel_attention(x, scope.scope("ca"), cfg.ca_reduction)
    assert (np.abs(out.data) <= np.abs(x.data)).all()


def test_stage_bins_clip_and_strict() -> None:
    """Clip drops oversized bins, strict refuses them."""
    assert stage_pool_bins(FusionConfig(), 16, 16) == BINS
    assert stage_pool_bins(FusionConfig(), 2, 2) == (1, 2)
    assert stage_pool_bins(FusionConfig(), 1, 1) == (1,)
    with pytest.raises(ConfigError):
        stage_pool_bins(FusionConfig(pool_bins_mode="strict"), 2, 2)
