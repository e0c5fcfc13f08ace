# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Model assembly: M encoders, four fusion blocks and the shared head."""

import numpy as np

from .encoder import encode, init_encoder
from .errors import ShapeError
from .fusion import fusion_block, init_fusion, stage_pool_bins
from .head import decode, init_head, predict_labels
from .params import Initializer, ParameterStore
from .schemas import check_model_config
from .tensor import Tensor
from .types import NUM_STAGES, FusedStage, ModelConfig, SegmentationMap, StagePyramid

ENCODER_PREFIX = "enc"
FUSION_PREFIX = "fusion"
HEAD_PREFIX = "head"


def pool_bins_per_stage(config: ModelConfig) -> list[tuple[int, ...]]:
    """Get the pool bins of every stage for the configured input size."""
    return [
        stage_pool_bins(
            config.fusion,
            *config.encoder.stage_extent(stage, config.data.height, config.data.width),
        )
        for stage in range(1, NUM_STAGES + 1)
    ]


def build_parameters(
    config: ModelConfig,
    seed: int,
    stage_bins: list[tuple[int, ...]] | None = None,
) -> ParameterStore:
    """Create freshly initialized parameters for ``config``."""
    if stage_bins is None:
        stage_bins = pool_bins_per_stage(config)
    store = ParameterStore()
    init = Initializer(store, np.random.default_rng(seed), config.init_std)
    for modality in range(config.modalities):
        init_encoder(
            init,
            store.scope(f"{ENCODER_PREFIX}.{modality}"),
            config.encoder_config(modality),
        )
    for stage, bins in enumerate(stage_bins, start=1):
        init_fusion(
            init,
            store.scope(f"{FUSION_PREFIX}.stage{stage}"),
            config.fusion,
            config.encoder.stage_channels[stage - 1],
            config.modalities,
            bins,
        )
    init_head(
        init,
        store.scope(HEAD_PREFIX),
        config.head,
        config.encoder.stage_channels,
    )
    if config.train.freeze_encoders:
        store.freeze(ENCODER_PREFIX)
    return store


class U3M:
    """Multimodal segmentation model.

    Holds the configuration and the parameters; the forward pass is a pure
    function of both and of the input images.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: ParameterStore | None = None,
        *,
        seed: int | None = None,
    ) -> None:
        """Construct."""
        self.config = check_model_config(config)
        self.stage_bins = pool_bins_per_stage(config)
        if params is None:
            params = build_parameters(
                config,
                config.train.seed if seed is None else seed,
                self.stage_bins,
            )
        elif config.train.freeze_encoders:
            params.freeze(ENCODER_PREFIX)
        self.params = params

    def encode(self, images: list[Tensor]) -> list[StagePyramid]:
        """Run every modality through its own encoder."""
        if len(images) != self.config.modalities:
            expected = self.config.modalities
            msg = f"model expects {expected} modalities, got {len(images)}"
            raise ShapeError(msg)
        shape = images[0].shape[-2:]
        for index, image in enumerate(images):
            if image.shape[-2:] != shape:
                msg = f"modality {index} is {image.shape[-2:]}, modality 0 is {shape}"
                raise ShapeError(msg)
        return [
            encode(
                image,
                self.config.encoder_config(modality),
                self.params.scope(f"{ENCODER_PREFIX}.{modality}"),
            )
            for modality, image in enumerate(images)
        ]

    def fuse(self, pyramids: list[StagePyramid]) -> list[FusedStage]:
        """Fuse the modality pyramids stage by stage."""
        return [
            fusion_block(
                [pyramid[index] for pyramid in pyramids],
                self.params.scope(f"{FUSION_PREFIX}.stage{index + 1}"),
                self.config.fusion,
                self.stage_bins[index],
            )
            for index in range(NUM_STAGES)
        ]

    def forward(self, images: list[Tensor]) -> Tensor:
        """Compute logits ``[B,N,H,W]`` from M images ``[B,C_m,H,W]``."""
        fused = self.fuse(self.encode(images))
        return decode(
            [stage.tensor for stage in fused],
            self.params.scope(HEAD_PREFIX),
            self.config.head,
            images[0].shape[-2:],
        )

    __call__ = forward

    def predict(self, images: list[Tensor]) -> SegmentationMap:
        """Predict a label raster ``[B,H,W]``."""
        return predict_labels(self.forward(images))
