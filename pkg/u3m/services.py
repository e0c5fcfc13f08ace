# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Services."""

import logging
from collections.abc import Callable
from dataclasses import replace
from functools import wraps
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .datasets import (
    ALIGNMENT,
    load_dataset_dir,
    load_sample,
    pad_to_multiple,
    select_modalities,
    stack_batch,
)
from .errors import ConfigError, DataError
from .metrics import ConfusionMatrix, format_table, miou
from .model import U3M
from .schemas import check_model_config, parse_config, with_seed
from .tensor import suspended
from .training import TrainingLog, evaluate, train
from .types import ModalitySample, ModelConfig, SegmentationMap

logger = logging.getLogger(__name__)


class SegmentationService:
    """Loads data, trains, evaluates and predicts for one configuration."""

    def __init__(self, config: ModelConfig, model: U3M | None = None) -> None:
        """Construct."""
        self.config = config
        self.model = model

    @classmethod
    def from_config(cls, path: Path, seed: int | None = None) -> "SegmentationService":
        """Build the service from a configuration file."""
        return cls(with_seed(parse_config(path), seed))

    @classmethod
    def from_checkpoint(cls, path: Path) -> "SegmentationService":
        """Build the service around a trained model."""
        model = load_checkpoint(path)
        return cls(model.config, model)

    def load(
        self,
        root: Path,
        split: str,
        config: ModelConfig | None = None,
    ) -> list[ModalitySample]:
        """Load ``split`` of the dataset at ``root``."""
        config = self.config if config is None else config
        return load_dataset_dir(
            root,
            split,
            modalities=config.modalities,
            num_classes=config.num_classes,
            pad_to_32=config.data.pad_to_32,
            ignore_index=config.train.ignore_index,
        )

    def _fit_extent(self, samples: list[ModalitySample]) -> ModelConfig:
        """Adopt the extent of ``samples`` when it differs from the config."""
        height, width = samples[0].shape
        data = self.config.data
        if (height, width) == (data.height, data.width):
            return self.config
        msg = "config declares %dx%d inputs, the dataset has %dx%d"
        logger.info(msg, data.height, data.width, height, width)
        data = replace(data, height=height, width=width)
        return check_model_config(replace(self.config, data=data))

    def train(
        self,
        data: Path,
        out: Path | None = None,
        log_path: Path | None = None,
    ) -> TrainingLog:
        """Train a fresh model on the ``train`` split."""
        samples = self.load(data, "train")
        self.config = self._fit_extent(samples)
        self.model = U3M(self.config)
        return train(self.model, samples, out=out, log_path=log_path)

    def _require_model(self) -> U3M:
        if self.model is None:
            msg = "the service has no trained model, train or load a checkpoint first"
            raise ConfigError(msg)
        return self.model

    def evaluate(self, data: Path, split: str = "test") -> ConfusionMatrix:
        """Evaluate the model on ``split``."""
        model = self._require_model()
        samples = self.load(data, split)
        return evaluate(model, samples, self.config.train.batch_size)

    def table(self, cm: ConfusionMatrix) -> str:
        """Render ``cm`` with the configured class names."""
        return format_table(cm, self.config.names())

    def predict(self, sample_dir: Path) -> SegmentationMap:
        """Predict the label raster of one sample directory.

        Samples that are not a multiple of 32 are padded for the forward pass
        and the prediction is cropped back.
        """
        model = self._require_model()
        sample = load_sample(
            Path(sample_dir),
            self.config.modalities,
            ignore_index=self.config.train.ignore_index,
        )
        height, width = sample.shape
        if height % ALIGNMENT or width % ALIGNMENT:
            if not self.config.data.pad_to_32:
                msg = f"sample {sample.name}: {height}x{width} is not a multiple of 32"
                raise DataError(msg)
            sample = pad_to_multiple(sample, ALIGNMENT, self.config.train.ignore_index)
        images, _ = stack_batch([sample])
        with suspended():
            prediction = model.predict(images)[0]
        return prediction[:height, :width]

    def ablate(
        self,
        data: Path,
        subsets: list[tuple[int, ...]],
        seeds: int,
    ) -> dict[tuple[int, ...], list[float]]:
        """Train and evaluate one model per modality subset and seed.

        Each subset keeps the listed modalities of the dataset, in order.
        Models are trained on ``train`` and scored on ``test``.
        """
        train_samples = self.load(data, "train")
        test_samples = self.load(data, "test")
        base = self._fit_extent(train_samples)
        scores: dict[tuple[int, ...], list[float]] = {}
        for subset in subsets:
            if not subset or max(subset) >= base.modalities or min(subset) < 0:
                msg = f"modality subset {subset} is outside 0..{base.modalities - 1}"
                raise ConfigError(msg)
            config = replace(
                base,
                modalities=len(subset),
                in_channels=tuple(base.in_channels[index] for index in subset),
            )
            chosen_train = select_modalities(train_samples, subset)
            chosen_test = select_modalities(test_samples, subset)
            scores[subset] = []
            for seed in range(seeds):
                seeded = with_seed(config, base.train.seed + seed)
                model = U3M(seeded)
                train(model, chosen_train)
                cm = evaluate(model, chosen_test, seeded.train.batch_size)
                scores[subset].append(miou(cm))
            msg = "modalities %s: mean miou %.4f over %d seeds"
            logger.info(msg, subset, float(np.mean(scores[subset])), seeds)
        return scores


def build_service[T](func: Callable[..., T]) -> Callable:
    """Decorate to build the services."""

    @wraps(func)
    def build(*_: dict, **kwargs: dict) -> T:
        if kwargs.get("ckpt") is not None:
            service = SegmentationService.from_checkpoint(kwargs.pop("ckpt"))
        else:
            kwargs.pop("ckpt", None)
            service = SegmentationService.from_config(
                kwargs.pop("config"),
                kwargs.pop("seed", None),
            )
        kwargs["segmentation_service"] = service

        return func(**kwargs)

    return build
