# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""NetPBM codec tests."""

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from u3m.errors import FormatError
from u3m.netpbm import decode, encode, read_image, write_image


def test_white_pixel() -> None:
    """A 1x1 white P6 decodes to (255, 255, 255)."""
    raster = decode(b"P6\n1 1\n255\n\xff\xff\xff")
    assert raster.shape == (1, 1, 3)
    assert_array_equal(raster[0, 0], [255, 255, 255])


def test_gray_gradient_byte_layout() -> None:
    """A 2x2 P5 is written row-major from the top-left corner."""
    raster = np.array([[0, 85], [170, 255]], dtype=np.uint8)
    assert encode(raster) == b"P5\n2 2\n255\n\x00\x55\xaa\xff"


def test_header_comments_and_whitespace() -> None:
    """Comments and arbitrary whitespace separate header fields."""
    data = b"P5 # gray\n# size follows\n3\t1\n255\n\x01\x02\x03"
    assert_array_equal(decode(data), [[1, 2, 3]])


def test_round_trip_is_byte_identical(rng: np.random.Generator) -> None:
    """Encoding a decoded image reproduces the bytes."""
    color = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    data = encode(color)
    assert encode(decode(data)) == data
    assert_array_equal(decode(data), color)


@pytest.mark.parametrize(
    "data",
    [
        b"P3\n1 1\n255\n1 2 3",
        b"P5\n1 1\n65535\n\x00\x00",
        b"P5\n2 2\n255\n\x00",
        b"P5\n0 2\n255\n",
        b"P5\nx 2\n255\n\x00\x00",
        b"P6\n1",
    ],
)
def test_malformed_files(data: bytes) -> None:
    """Wrong magic, maxval, extent or payload length are format errors."""
    with pytest.raises(FormatError):
        decode(data)


def test_encode_validates_rasters() -> None:
    """Only uint8 gray or RGB rasters are encodable."""
    with pytest.raises(FormatError):
        encode(np.zeros((2, 2)))
    with pytest.raises(FormatError):
        encode(np.zeros((2, 2, 4), dtype=np.uint8))


def test_files(tmp_path: Path) -> None:
    """Images survive a trip through the filesystem."""
    raster = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_image(tmp_path / "a.pgm", raster)
    assert_array_equal(read_image(tmp_path / "a.pgm"), raster)
    with pytest.raises(FormatError):
        read_image(tmp_path / "missing.pgm")
