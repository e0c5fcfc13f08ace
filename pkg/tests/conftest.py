# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Pytest configuration."""

from pathlib import Path

import numpy as np
import pytest

from u3m.model import U3M
from u3m.synth import synth_dataset
from u3m.types import DataConfig, ModalitySample, ModelConfig, TrainConfig


@pytest.fixture()
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def config_file() -> Path:
    """Desk-scale configuration file."""
    return Path(__file__).parent / "data" / "desk.cfg"


@pytest.fixture()
def desk_config() -> ModelConfig:
    """Two-modality model on 32x32 inputs."""
    return ModelConfig(
        modalities=2,
        in_channels=(3, 1),
        init_std=0.1,
        train=TrainConfig(lr=0.01, batch_size=2, epochs=1, seed=3),
        data=DataConfig(height=32, width=32),
    )


@pytest.fixture()
def desk_model(desk_config: ModelConfig) -> U3M:
    """Freshly initialized desk-scale model."""
    return U3M(desk_config)


@pytest.fixture(scope="session")
def tiny_samples() -> list[ModalitySample]:
    """Four synthetic two-modality 32x32 samples."""
    return synth_dataset(4, 2, 3, (32, 32), seed=11)
