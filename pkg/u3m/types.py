# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Types."""

from dataclasses import dataclass, field, replace

import numpy as np
import numpy.typing as npt

from . import config
from .tensor import Tensor

ParamName = str
"""Dotted path of a parameter, e.g. ``enc.0.stage2.block1.attn.wq``."""

SegmentationMap = npt.NDArray[np.int64]
"""Integer class-index raster, ``ignore_index`` marks unlabeled pixels."""

Raster = npt.NDArray[np.uint8]
"""Decoded image, ``(H, W)`` for gray and ``(H, W, 3)`` for color."""

NUM_STAGES = 4
"""Depth of the feature pyramid."""


@dataclass(frozen=True)
class Color:
    """The class is for the output color management."""

    neutral = "white"
    error = "red"
    warning = "yellow"
    abort = "magenta"
    success = "green"
    alternate = ("blue", "cyan")


@dataclass(frozen=True)
class EncoderConfig:
    """Hyperparameters of one mix-transformer encoder."""

    in_channels: int = config.U3M_IN_CHANNELS[0]
    stage_channels: tuple[int, ...] = config.U3M_STAGE_CHANNELS
    stage_depths: tuple[int, ...] = config.U3M_STAGE_DEPTHS
    heads: tuple[int, ...] = config.U3M_HEADS
    sr_ratios: tuple[int, ...] = config.U3M_SR_RATIOS
    patch_sizes: tuple[int, ...] = config.U3M_PATCH_SIZES
    strides: tuple[int, ...] = config.U3M_STRIDES
    mlp_ratio: int = config.U3M_MLP_RATIO

    def downsampling(self, stage: int) -> int:
        """Total stride from the input to the output of ``stage`` (1-based)."""
        factor = 1
        for stride in self.strides[:stage]:
            factor *= stride
        return factor

    def stage_extent(self, stage: int, height: int, width: int) -> tuple[int, int]:
        """Spatial extent of the feature map of ``stage`` (1-based)."""
        factor = self.downsampling(stage)
        return height // factor, width // factor


@dataclass(frozen=True)
class FusionConfig:
    """Hyperparameters of the per-stage fusion blocks."""

    pool_bins: tuple[int, ...] = config.U3M_POOL_BINS
    conv_kernels: tuple[int, ...] = config.U3M_CONV_KERNELS
    ca_reduction: int = config.U3M_CA_REDUCTION
    pool_bins_mode: str = config.U3M_POOL_BINS_MODE
    variant: str = config.U3M_FUSION_VARIANT


@dataclass(frozen=True)
class HeadConfig:
    """Hyperparameters of the shared MLP decoder."""

    decoder_dim: int = config.U3M_DECODER_DIM
    num_classes: int = config.U3M_NUM_CLASSES


@dataclass(frozen=True)
class TrainConfig:
    """Optimization recipe."""

    lr: float = config.U3M_LR
    batch_size: int = config.U3M_BATCH_SIZE
    epochs: int = config.U3M_EPOCHS
    max_steps: int = config.U3M_MAX_STEPS
    seed: int = config.U3M_SEED
    beta1: float = config.U3M_ADAM_BETAS[0]
    beta2: float = config.U3M_ADAM_BETAS[1]
    adam_eps: float = config.U3M_ADAM_EPS
    schedule: str = config.U3M_SCHEDULE
    freeze_encoders: bool = config.U3M_FREEZE_ENCODERS
    hflip: bool = config.U3M_AUGMENT["hflip"]
    rotate: bool = config.U3M_AUGMENT["rotate"]
    scale: bool = config.U3M_AUGMENT["scale"]
    ignore_index: int = config.U3M_IGNORE_INDEX


@dataclass(frozen=True)
class DataConfig:
    """Input geometry the model is validated against."""

    height: int = config.U3M_IMAGE_SIZE[0]
    width: int = config.U3M_IMAGE_SIZE[1]
    pad_to_32: bool = config.U3M_PAD_TO_32


@dataclass(frozen=True)
class ModelConfig:
    """Full description of a model and of how it is trained."""

    modalities: int = config.U3M_MODALITIES
    in_channels: tuple[int, ...] = config.U3M_IN_CHANNELS
    init_std: float = config.U3M_INIT_STD
    class_names: tuple[str, ...] = ()
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def num_classes(self) -> int:
        """Number of semantic classes."""
        return self.head.num_classes

    def encoder_config(self, modality: int) -> EncoderConfig:
        """Get the encoder config of ``modality``."""
        return replace(self.encoder, in_channels=self.in_channels[modality])

    def names(self) -> tuple[str, ...]:
        """Class names, numbered when none are configured."""
        if self.class_names:
            return self.class_names
        return tuple(f"class{index}" for index in range(self.num_classes))


@dataclass(frozen=True)
class ModalitySample:
    """One scene: M co-registered images and its label raster.

    Images are ``float64`` arrays of shape ``(C_m, H, W)`` with values in
    ``[0, 1]``, the label is an ``int64`` array of shape ``(H, W)``.
    """

    images: tuple[npt.NDArray[np.float64], ...]
    label: SegmentationMap
    name: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        """Height and width shared by all modalities."""
        return self.label.shape


@dataclass(frozen=True)
class StagePyramid:
    """Four feature maps at 1/4, 1/8, 1/16 and 1/32 of the input."""

    features: tuple[Tensor, ...]

    def __getitem__(self, stage: int) -> Tensor:
        """Get the map of ``stage`` (0-based)."""
        return self.features[stage]

    def __len__(self) -> int:
        """Get the number of stages."""
        return len(self.features)


@dataclass(frozen=True)
class FusedStage:
    """Fused feature of one stage, shaped like each modality feature."""

    tensor: Tensor
