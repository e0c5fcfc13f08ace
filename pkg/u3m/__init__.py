# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Unbiased multiscale fusion of modalities for semantic segmentation."""

from .model import U3M
from .services import SegmentationService

__version__ = "0.1.0"

__all__ = ("__version__", "U3M", "SegmentationService")
