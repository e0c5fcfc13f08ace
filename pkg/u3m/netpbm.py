# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Binary NetPBM codec.

Only the raw variants with 8-bit samples are supported: ``P5`` (gray,
``(H, W)`` rasters) and ``P6`` (color, ``(H, W, 3)`` rasters). Rows are
stored top to bottom, samples left to right.

>>> decode(b"P6\\n1 1\\n255\\n\\xff\\xff\\xff").tolist()
[[[255, 255, 255]]]
"""

from pathlib import Path

import numpy as np

from .errors import FormatError
from .types import Raster

MAXVAL = 255
"""The only accepted sample maximum."""

CHANNELS = {b"P5": 1, b"P6": 3}
"""Samples per pixel of each magic."""

_WHITESPACE = b" \t\n\r\v\f"


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` header tokens, skipping whitespace and comments."""
    tokens = []
    position = 0
    while len(tokens) < count:
        while position < len(data) and data[position] in _WHITESPACE:
            position += 1
        if position < len(data) and data[position : position + 1] == b"#":
            end = data.find(b"\n", position)
            position = len(data) if end < 0 else end + 1
            continue
        start = position
        while position < len(data) and data[position] not in _WHITESPACE:
            position += 1
        if start == position:
            msg = "netpbm header is truncated"
            raise FormatError(msg)
        tokens.append(data[start:position])
    return tokens, position


def decode(data: bytes) -> Raster:
    """Decode a raw ``P5``/``P6`` image."""
    magic = data[:2]
    if magic not in CHANNELS:
        msg = f"unsupported netpbm magic {magic!r}, expected P5 or P6"
        raise FormatError(msg)
    tokens, position = _tokens(data[2:], 3)
    try:
        width, height, maxval = (int(token) for token in tokens)
    except ValueError as error:
        msg = f"netpbm header fields {tokens} are not integers"
        raise FormatError(msg) from error
    if maxval != MAXVAL:
        msg = f"netpbm maxval {maxval} is not supported, expected {MAXVAL}"
        raise FormatError(msg)
    if width < 1 or height < 1:
        msg = f"netpbm extent {width}x{height} is empty"
        raise FormatError(msg)

    payload = data[2 + position + 1 :]
    channels = CHANNELS[magic]
    expected = width * height * channels
    if len(payload) != expected:
        msg = f"netpbm payload has {len(payload)} bytes, expected {expected}"
        raise FormatError(msg)
    raster = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return raster.reshape(shape).copy()


def encode(raster: Raster) -> bytes:
    """Encode ``(H, W)`` as ``P5`` and ``(H, W, 3)`` as ``P6``."""
    raster = np.asarray(raster)
    if raster.dtype != np.uint8:
        msg = f"netpbm rasters hold uint8 samples, got {raster.dtype}"
        raise FormatError(msg)
    if raster.ndim == 2:  # noqa: PLR2004
        magic = b"P5"
    elif raster.ndim == 3 and raster.shape[2] == 3:  # noqa: PLR2004
        magic = b"P6"
    else:
        msg = f"cannot encode a raster of shape {raster.shape}"
        raise FormatError(msg)
    height, width = raster.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, MAXVAL)
    return header + np.ascontiguousarray(raster).tobytes()


def read_image(path: Path) -> Raster:
    """Read and decode ``path``."""
    try:
        return decode(path.read_bytes())
    except FormatError as error:
        msg = f"{path}: {error}"
        raise FormatError(msg) from error


def write_image(path: Path, raster: Raster) -> None:
    """Encode ``raster`` into ``path``."""
    path.write_bytes(encode(raster))
