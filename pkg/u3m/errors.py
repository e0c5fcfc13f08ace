# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Errors."""


class U3MError(RuntimeError):
    """Base class of every error raised by the package."""


class ShapeError(U3MError):
    """Tensor extents do not satisfy an operator contract."""


class FusionError(ShapeError):
    """Modality features handed to a fusion block disagree in shape."""


class ConfigError(U3MError):
    """Configuration is invalid."""


class DataError(U3MError):
    """Dataset content is invalid."""


class FormatError(DataError):
    """Binary content does not follow the expected format."""


class ChecksumError(FormatError):
    """Checkpoint integrity check failed."""


class TapeStateError(U3MError):
    """Tape is used outside of its forward/backward lifetime."""


class NonFiniteError(U3MError):
    """A forward operator produced NaN or Inf."""


class EvaluationError(U3MError):
    """Objective could not be evaluated to a finite value."""


class MetricError(U3MError):
    """Metric is undefined for the accumulated counts."""


class ConsistencyError(U3MError):
    """Gradients and parameters disagree."""


class DegenerateBatchError(U3MError):
    """Every pixel of a batch is ignored."""


class TrainingError(U3MError):
    """Training had to be aborted."""
