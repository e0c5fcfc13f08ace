# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Checkpoint files.

All integers are little-endian::

    b"U3M\\x01" | u32 version | u32 n | n bytes config JSON | u32 count
    count x (u32 n | n bytes name | u32 rank | rank x u64 dim | float32 data)
    u32 CRC-32 of every preceding byte

Parameters are stored in registration order as 32-bit floats.
"""

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, ShapeError
from .model import U3M, build_parameters
from .params import ParameterStore
from .schemas import config_from_json, config_to_json
from .types import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"U3M\x01"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class _Reader:
    """Cursor over the checkpoint body."""

    def __init__(self, data: bytes) -> None:
        """Construct."""
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        """Consume ``size`` bytes."""
        if self.offset + size > len(self.data):
            msg = f"checkpoint ends inside a field at byte {self.offset}"
            raise FormatError(msg)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        """Consume an unsigned 32-bit integer."""
        return _U32.unpack(self.take(_U32.size))[0]

    def u64(self) -> int:
        """Consume an unsigned 64-bit integer."""
        return _U64.unpack(self.take(_U64.size))[0]


def encode_checkpoint(params: ParameterStore, config: ModelConfig) -> bytes:
    """Serialize ``params`` and ``config``."""
    text = config_to_json(config).encode("utf-8")
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(text)), text]
    chunks.append(_U32.pack(len(params)))
    for param in params:
        name = param.name.encode("utf-8")
        chunks += [_U32.pack(len(name)), name, _U32.pack(len(param.shape))]
        chunks += [_U64.pack(dim) for dim in param.shape]
        chunks.append(param.tensor.data.astype("<f4").tobytes())
    body = b"".join(chunks)
    return body + _U32.pack(zlib.crc32(body))


def decode_checkpoint(data: bytes) -> tuple[ModelConfig, ParameterStore]:
    """Deserialize a checkpoint after verifying its checksum."""
    if len(data) < len(MAGIC) + 4 * _U32.size:
        msg = f"checkpoint is truncated ({len(data)} bytes)"
        raise ChecksumError(msg)
    body, stored = data[:-4], _U32.unpack(data[-4:])[0]
    if zlib.crc32(body) != stored:
        msg = "checkpoint CRC-32 does not match, the file is corrupt or truncated"
        raise ChecksumError(msg)

    reader = _Reader(body)
    if reader.take(len(MAGIC)) != MAGIC:
        msg = "not a u3m checkpoint"
        raise FormatError(msg)
    version = reader.u32()
    if version != VERSION:
        msg = f"checkpoint version {version} is not supported, expected {VERSION}"
        raise FormatError(msg)
    config = config_from_json(reader.take(reader.u32()).decode("utf-8"))

    store = ParameterStore()
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u64() for _ in range(reader.u32()))
        size = int(np.prod(shape, dtype=np.int64)) * 4
        values = np.frombuffer(reader.take(size), dtype="<f4").reshape(shape)
        store.add(name, values.astype(np.float64))
    if reader.offset != len(body):
        msg = f"checkpoint has {len(body) - reader.offset} trailing bytes"
        raise FormatError(msg)
    return config, store


def check_parameters(params: ParameterStore, config: ModelConfig) -> None:
    """Check that ``params`` has exactly the parameters ``config`` builds."""
    expected = build_parameters(config, seed=0)
    for param in expected:
        if param.name not in params:
            msg = f"parameter {param.name} {param.shape} is missing from the checkpoint"
            raise ShapeError(msg)
        found = params.parameter(param.name).shape
        if found != param.shape:
            msg = f"parameter {param.name} is {found}, the config needs {param.shape}"
            raise ShapeError(msg)
    extra = [name for name in params.names() if name not in expected]
    if extra:
        msg = f"parameter {extra[0]} is not part of the configured model"
        raise ShapeError(msg)


def save_checkpoint(path: Path, params: ParameterStore, config: ModelConfig) -> Path:
    """Write a checkpoint to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, config))
    msg = "saved %d parameters to %s"
    logger.info(msg, len(params), path)
    return path


def load_checkpoint(path: Path, config: ModelConfig | None = None) -> U3M:
    """Read the model stored at ``path``.

    With ``config`` the parameters are checked against that configuration
    instead of the stored one.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as error:
        msg = f"cannot read checkpoint {path}: {error}"
        raise FormatError(msg) from error
    stored, params = decode_checkpoint(data)
    config = stored if config is None else config
    check_parameters(params, config)
    msg = "loaded %d parameters from %s"
    logger.info(msg, len(params), path)
    return U3M(config, params)
