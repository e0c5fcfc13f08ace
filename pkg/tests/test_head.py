# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Segmentation head tests."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from u3m.errors import ShapeError
from u3m.head import decode, init_head, predict_labels
from u3m.params import Initializer, ParameterStore
from u3m.tensor import Tensor
from u3m.types import HeadConfig

STAGE_CHANNELS = (16, 32, 64, 128)


def _stages(rng: np.random.Generator, quarter: int) -> list[Tensor]:
    return [
        Tensor(rng.normal(size=(1, channels, quarter >> index, quarter >> index)))
        for index, channels in enumerate(STAGE_CHANNELS)
    ]


def test_decode_returns_full_resolution_logits(rng: np.random.Generator) -> None:
    """Logits come back at the input resolution."""
    store = ParameterStore()
    cfg = HeadConfig(decoder_dim=32, num_classes=5)
    init_head(Initializer(store, rng, 0.02), store.scope("head"), cfg, STAGE_CHANNELS)
    logits = decode(_stages(rng, 16), store.scope("head"), cfg, (64, 64))
    assert logits.shape == (1, 5, 64, 64)


def test_decode_checks_stage_extents(rng: np.random.Generator) -> None:
    """Stages have to halve from a quarter of the input."""
    store = ParameterStore()
    cfg = HeadConfig()
    init_head(Initializer(store, rng, 0.02), store.scope("head"), cfg, STAGE_CHANNELS)
    with pytest.raises(ShapeError):
        decode(_stages(rng, 16), store.scope("head"), cfg, (32, 32))
    with pytest.raises(ShapeError):
        decode(_stages(rng, 16)[:3], store.scope("head"), cfg, (64, 64))


def test_argmax_ties_take_smallest_class() -> None:
    """Equal logits resolve to the lowest index."""
    logits = np.zeros((1, 3, 1, 2))
    logits[0, 2, 0, 1] = 1.0
    assert_array_equal(predict_labels(logits), [[[0, 2]]])
