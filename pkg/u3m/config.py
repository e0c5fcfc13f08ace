# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Default configuration for u3m-segmentation.

Every key of the configuration file falls back to the value documented here
when it is missing. The values describe the desk-scale model: small enough
for finite-difference checks and overfit runs on one CPU core.
"""

U3M_MODALITIES = 1
"""Number of input modalities M."""

U3M_IN_CHANNELS = (3,)
"""Channel count per modality, broadcast when a single value is given."""

U3M_NUM_CLASSES = 3
"""Number of semantic classes N."""

U3M_INIT_STD = 0.02
"""Standard deviation of the truncated-normal init of linear weights."""

U3M_STAGE_CHANNELS = (16, 32, 64, 128)
"""Channel width C_i of the four encoder stages."""

U3M_STAGE_DEPTHS = (1, 1, 1, 1)
"""Number of transformer blocks per stage."""

U3M_HEADS = (1, 2, 4, 8)
"""Attention heads per stage."""

U3M_SR_RATIOS = (4, 4, 2, 1)
"""Sequence reduction ratio R of the key/value path per stage."""

U3M_PATCH_SIZES = (7, 3, 3, 3)
"""Kernel size of the overlapping patch embedding per stage."""

U3M_STRIDES = (4, 2, 2, 2)
"""Stride of the overlapping patch embedding per stage."""

U3M_MLP_RATIO = 4
"""Hidden expansion of the Mix-FFN."""

U3M_POOL_BINS = (1, 2, 3, 6)
"""Output bins of the pyramidal pooling branches.

Set to ``1, 2, 5, 6`` to follow the alternative reading of the pooling sum.
"""

U3M_POOL_BINS_MODE = "clip"
"""How bins larger than a stage are handled: ``clip`` drops them per stage,
``strict`` rejects the configuration."""

U3M_CONV_KERNELS = (3, 5, 7)
"""Kernel sizes of the pyramidal convolution branches."""

U3M_CA_REDUCTION = 4
"""Bottleneck reduction of the channel attention."""

U3M_FUSION_VARIANT = "full"
"""Fusion block layout: ``full``, ``linear``, ``linear_ca`` or ``linear_pool``."""

U3M_DECODER_DIM = 64
"""Common channel width of the segmentation head."""

U3M_LR = 6e-5
"""Initial learning rate of Adam."""

U3M_BATCH_SIZE = 4
"""Samples per optimizer step."""

U3M_EPOCHS = 10
"""Training epochs at desk scale."""

U3M_MAX_STEPS = 0
"""Upper bound on optimizer steps, ``0`` disables the bound."""

U3M_SEED = 0
"""Seed of every random draw of a training run."""

U3M_ADAM_BETAS = (0.9, 0.999)
"""Adam moment decay rates."""

U3M_ADAM_EPS = 1e-8
"""Adam denominator epsilon."""

U3M_SCHEDULE = "constant"
"""Learning rate schedule, ``constant`` or ``cosine``."""

U3M_FREEZE_ENCODERS = False
"""Keep the modality encoders fixed during training."""

U3M_AUGMENT = {"hflip": True, "rotate": True, "scale": True}
"""Enabled augmentations."""

U3M_IGNORE_INDEX = 255
"""Label value excluded from loss and metrics."""

U3M_IMAGE_SIZE = (64, 64)
"""Input height and width the configuration is validated against."""

U3M_PAD_TO_32 = False
"""Pad dataset images to a multiple of 32 instead of rejecting them."""

U3M_LAYER_NORM_EPS = 1e-6
"""Epsilon of every layer normalization."""

U3M_GRADCHECK_EPS = 1e-5
"""Central-difference step of the gradient check."""

U3M_GRADCHECK_COORDS = 100
"""Sampled coordinates per parameter in the gradient check."""

U3M_GRADCHECK_TOLERANCE = 1e-4
"""Largest accepted relative gradient error."""
