# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Training tests."""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from u3m.checkpoint import load_checkpoint
from u3m.errors import ConsistencyError, DataError, TrainingError
from u3m.model import U3M
from u3m.params import ParameterStore
from u3m.synth import synth_dataset
from u3m.tensor import Tensor
from u3m.training import (
    AdamState,
    adam_step,
    best_checkpoint_path,
    cross_entropy_loss,
    learning_rate,
    train,
)
from u3m.types import DataConfig, ModalitySample, ModelConfig, TrainConfig


def _store(*values: float) -> ParameterStore:
    store = ParameterStore()
    store.add("w", np.array(values))
    return store


def test_uniform_logits_give_log_classes() -> None:
    """Cross entropy of uniform logits is ln N."""
    loss = cross_entropy_loss(Tensor(np.zeros((1, 4, 2, 2))), np.zeros((1, 2, 2)), 255)
    assert abs(loss.item() - math.log(4)) < 1e-12  # noqa: PLR2004


def test_adam_zero_gradient_is_fixed_point() -> None:
    """Zero gradients leave parameters alone and count the step."""
    store = _store(1.0, -2.0)
    state = AdamState.for_params(store)
    adam_step(store, {"w": Tensor(np.zeros(2))}, state, TrainConfig(lr=0.1))
    assert_array_equal(store["w"].data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_closed_form() -> None:
    """The first bias-corrected step moves by ``lr * g / (|g| + eps)``."""
    cfg = TrainConfig(lr=0.01)
    store = _store(0.5)
    adam_step(store, {"w": Tensor([-3.0])}, AdamState.for_params(store), cfg)
    expected = 0.5 + 0.01 * 3.0 / (3.0 + cfg.adam_eps)
    assert_allclose(store["w"].data, [expected], rtol=1e-12)


def test_adam_requires_every_gradient() -> None:
    """A trainable parameter without gradient is inconsistent."""
    store = _store(0.0)
    with pytest.raises(ConsistencyError):
        adam_step(store, {}, AdamState.for_params(store), TrainConfig())


def test_adam_skips_frozen_parameters() -> None:
    """Frozen parameters need no gradient and do not move."""
    store = _store(1.0)
    store.add("enc.0.w", np.ones(2))
    store.freeze("enc")
    state = AdamState.for_params(store)
    adam_step(store, {"w": Tensor([1.0])}, state, TrainConfig(lr=0.1))
    assert_array_equal(store["enc.0.w"].data, [1.0, 1.0])
    assert "enc.0.w" not in state.first


def test_cosine_schedule() -> None:
    """Cosine decays from lr to zero, constant stays."""
    cfg = TrainConfig(lr=0.2, schedule="cosine")
    assert learning_rate(cfg, 0, 10) == pytest.approx(0.2)
    assert learning_rate(cfg, 5, 10) == pytest.approx(0.1)
    assert learning_rate(TrainConfig(lr=0.2), 7, 10) == 0.2  # noqa: PLR2004


def test_zero_learning_rate_keeps_parameters(
    desk_config: ModelConfig,
    tiny_samples: list[ModalitySample],
) -> None:
    """With lr 0 training changes nothing."""
    model = U3M(desk_config)
    before = model.params.state()
    train(model, tiny_samples, replace(desk_config.train, lr=0.0, max_steps=2))
    for name, values in model.params.state().items():
        assert_array_equal(values, before[name])


def test_training_is_deterministic(
    desk_config: ModelConfig,
    tiny_samples: list[ModalitySample],
) -> None:
    """Two runs with the same seed end bit-identical."""
    cfg = replace(desk_config.train, max_steps=3)
    first, second = U3M(desk_config), U3M(desk_config)
    log_a = train(first, tiny_samples, cfg)
    log_b = train(second, tiny_samples, cfg)
    assert log_a.step_losses == log_b.step_losses
    for a, b in zip(first.params, second.params, strict=True):
        assert_array_equal(a.tensor.data, b.tensor.data)


def test_frozen_encoders_do_not_move(
    desk_config: ModelConfig,
    tiny_samples: list[ModalitySample],
) -> None:
    """Encoder bytes are unchanged after training with frozen encoders."""
    train_cfg = replace(desk_config.train, freeze_encoders=True, max_steps=2)
    model = U3M(replace(desk_config, train=train_cfg))
    before = model.params.state()
    train(model, tiny_samples)
    for name, values in model.params.state().items():
        if name.startswith("enc."):
            assert values.tobytes() == before[name].tobytes()
    assert not np.array_equal(model.params["head.cls.w"].data, before["head.cls.w"])


def test_checkpoints_and_log_are_written(
    tmp_path: Path,
    desk_config: ModelConfig,
    tiny_samples: list[ModalitySample],
) -> None:
    """Final and best checkpoints and the CSV log appear."""
    out = tmp_path / "run" / "model.ckpt"
    log = train(
        U3M(desk_config),
        tiny_samples,
        replace(desk_config.train, epochs=2),
        out,
        log_path=tmp_path / "run" / "log.csv",
    )
    assert out.is_file()
    assert best_checkpoint_path(out) == tmp_path / "run" / "model.best.ckpt"
    assert best_checkpoint_path(out).is_file()
    lines = (tmp_path / "run" / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,miou"
    assert len(lines) == 1 + len(log.epochs) == 3  # noqa: PLR2004
    assert load_checkpoint(out).config == desk_config


def test_empty_dataset_is_rejected(desk_model: U3M) -> None:
    """Training needs samples."""
    with pytest.raises(DataError):
        train(desk_model, [])


def _overfit_config() -> ModelConfig:
    return ModelConfig(
        modalities=2,
        in_channels=(3, 1),
        train=TrainConfig(
            lr=3e-3,
            batch_size=4,
            epochs=250,
            max_steps=500,
            seed=0,
            hflip=False,
            rotate=False,
            scale=False,
        ),
        data=DataConfig(height=32, width=32),
    )


@pytest.mark.slow()
def test_overfits_tiny_task() -> None:
    """A small model memorizes eight samples."""
    samples = synth_dataset(8, 2, 3, (32, 32), seed=0, degrade_fraction=0.0)
    log = train(U3M(_overfit_config()), samples)
    assert log.best_miou >= 0.95  # noqa: PLR2004
    assert log.step_losses[-1] < 0.1 * log.step_losses[0]


@pytest.mark.slow()
def test_overfit_run_is_reproducible() -> None:
    """Repeating the overfit run gives identical logs and parameters."""
    samples = synth_dataset(8, 2, 3, (32, 32), seed=0, degrade_fraction=0.0)
    first, second = U3M(_overfit_config()), U3M(_overfit_config())
    log_a, log_b = train(first, samples), train(second, samples)
    assert log_a.epochs == log_b.epochs
    assert log_a.step_losses == log_b.step_losses
    for a, b in zip(first.params, second.params, strict=True):
        assert_array_equal(a.tensor.data, b.tensor.data)


def test_non_finite_parameter_names_the_step(
    desk_model: U3M,
    tiny_samples: list[ModalitySample],
) -> None:
    """A NaN weight stops training at the first step."""
    desk_model.params["head.cls.w"].data[0, 0] = np.nan
    with pytest.raises(TrainingError, match="step 0: "):
        train(desk_model, tiny_samples)


def test_diverging_update_names_the_step(
    desk_config: ModelConfig,
    tiny_samples: list[ModalitySample],
) -> None:
    """Weights blown up by one update fail on the following step."""
    cfg = replace(desk_config.train, lr=1e308, max_steps=2)
    with pytest.raises(TrainingError, match="step 1: "):
        train(U3M(desk_config), tiny_samples, cfg)
