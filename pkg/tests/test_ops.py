# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Operator tests."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from u3m import ops
from u3m.errors import DataError, DegenerateBatchError, NonFiniteError, ShapeError
from u3m.tensor import Tensor


def _conv_oracle(
    x: np.ndarray,
    w: np.ndarray,
    stride: int,
    pad: int,
    groups: int,
) -> np.ndarray:
    """Direct six-fold loop."""
    batch, channels, height, width = x.shape
    out_channels, _, kernel, _ = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (height + 2 * pad - kernel) // stride + 1
    out_w = (width + 2 * pad - kernel) // stride + 1
    out = np.zeros((batch, out_channels, out_h, out_w))
    for b in range(batch):
        for o in range(out_channels):
            inputs = [o] if groups == channels else range(channels)
            for slot, c in enumerate(inputs):
                for i in range(out_h):
                    for j in range(out_w):
                        window = padded[
                            b,
                            c,
                            i * stride : i * stride + kernel,
                            j * stride : j * stride + kernel,
                        ]
                        out[b, o, i, j] += (window * w[o, slot]).sum()
    return out


def test_matmul_identity_and_shapes(rng: np.random.Generator) -> None:
    """Multiplying by the identity is exact, mismatched shapes fail."""
    a = Tensor(rng.normal(size=(3, 4)))
    assert_array_equal(ops.matmul(a, Tensor(np.eye(4))).data, a.data)
    with pytest.raises(ShapeError):
        ops.matmul(a, Tensor(np.ones((3, 4))))


@pytest.mark.parametrize(
    ("x_shape", "w_shape", "stride", "pad", "groups"),
    [
        ((1, 2, 5, 5), (3, 2, 3, 3), 1, 1, 1),
        ((2, 3, 9, 9), (4, 3, 3, 3), 2, 1, 1),
        ((1, 4, 6, 6), (4, 1, 5, 5), 1, 2, 4),
    ],
)
def test_conv2d_matches_direct_loop(  # noqa: PLR0913
    rng: np.random.Generator,
    x_shape: tuple[int, ...],
    w_shape: tuple[int, ...],
    stride: int,
    pad: int,
    groups: int,
) -> None:
    """Dense, strided and depthwise convolutions equal the loop oracle."""
    x, w = rng.normal(size=x_shape), rng.normal(size=w_shape)
    out = ops.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad, groups=groups)
    assert_allclose(out.data, _conv_oracle(x, w, stride, pad, groups), atol=1e-12)


def test_conv2d_identity_kernel(rng: np.random.Generator) -> None:
    """A 1x1 identity kernel reproduces the input."""
    x = Tensor(rng.normal(size=(1, 3, 4, 4)))
    w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
    assert_array_equal(ops.conv2d(x, w).data, x.data)


def test_conv2d_rejects_fractional_extent() -> None:
    """Exact mode refuses strides that do not tile the input."""
    x, w = Tensor(np.ones((1, 1, 8, 8))), Tensor(np.ones((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, w, stride=2, pad=1)
    assert ops.conv2d(x, w, stride=2, pad=1, exact=False).shape == (1, 1, 4, 4)


def test_adaptive_pool_of_constant(rng: np.random.Generator) -> None:
    """Pooling a constant map gives the constant, one bin gives the mean."""
    x = np.full((1, 2, 6, 6), 3.5)
    assert_array_equal(ops.adaptive_avg_pool2d(Tensor(x), 3).data, 3.5)
    y = rng.normal(size=(2, 3, 5, 7))
    pooled = ops.adaptive_avg_pool2d(Tensor(y), 1).data
    assert_allclose(pooled[..., 0, 0], y.mean(axis=(2, 3)), atol=1e-14)
    with pytest.raises(ShapeError):
        ops.adaptive_avg_pool2d(Tensor(y), 6)


def test_pooling_windows_overlap_on_uneven_extents() -> None:
    """Bins follow floor/ceil window bounds."""
    matrix = ops.pooling_matrix(5, 2)
    assert_allclose(matrix[0], [1 / 3, 1 / 3, 1 / 3, 0, 0])
    assert_allclose(matrix[1], [0, 0, 1 / 3, 1 / 3, 1 / 3])


def test_bilinear_upsample_constant_and_rows() -> None:
    """Interpolation preserves constants and every row sums to one."""
    x = Tensor(np.full((1, 1, 2, 3), -1.25))
    assert_allclose(ops.bilinear_upsample(x, 8, 12).data, -1.25, atol=1e-15)
    assert_allclose(ops.interpolation_matrix(4, 16).sum(axis=1), 1.0)
    with pytest.raises(ShapeError):
        ops.bilinear_upsample(x, 1, 3)


def test_bilinear_upsample_half_pixel_centers() -> None:
    """Doubling a 2-pixel row follows align-corners=false."""
    x = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
    out = ops.bilinear_upsample(x, 1, 4).data.reshape(-1)
    assert_allclose(out, [0.0, 0.25, 0.75, 1.0])


def test_softmax_rows_sum_to_one(rng: np.random.Generator) -> None:
    """Rows are normalized, large logits do not overflow."""
    x = Tensor(rng.normal(scale=50.0, size=(4, 7)))
    assert_allclose(ops.softmax(x).data.sum(axis=-1), 1.0, atol=1e-12)
    logs = ops.log_softmax(x).data
    assert_allclose(np.exp(logs).sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_statistics(rng: np.random.Generator) -> None:
    """Unit affine gives zero mean and unit variance per row."""
    x = Tensor(rng.normal(3.0, 2.0, size=(5, 16)))
    out = ops.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)


def test_cross_entropy_uniform_logits_is_log_classes() -> None:
    """Uniform logits give ln N."""
    logits = Tensor(np.zeros((2, 5, 3, 3)))
    labels = np.arange(18).reshape(2, 3, 3) % 5
    loss = ops.softmax_cross_entropy(logits, labels, 255).item()
    assert abs(loss - math.log(5)) < 1e-12  # noqa: PLR2004


def test_cross_entropy_matches_per_pixel_sum(rng: np.random.Generator) -> None:
    """The mean ignores ``ignore_index`` pixels."""
    logits = rng.normal(size=(2, 2, 2, 2))
    labels = np.array([[[0, 1], [255, 1]], [[1, 0], [0, 255]]])
    expected = []
    for b, i, j in np.ndindex(2, 2, 2):
        if labels[b, i, j] != 255:  # noqa: PLR2004
            column = logits[b, :, i, j]
            log_probs = column - np.log(np.exp(column).sum())
            expected.append(-log_probs[labels[b, i, j]])
    loss = ops.softmax_cross_entropy(Tensor(logits), labels, 255).item()
    assert_allclose(loss, np.mean(expected), atol=1e-12)


def test_cross_entropy_saturates_on_confident_logits() -> None:
    """Strong logits on the right class drive the loss to zero."""
    labels = np.array([[[0, 1]]])
    logits = np.zeros((1, 2, 1, 2))
    logits[0, 0, 0, 0] = logits[0, 1, 0, 1] = 50.0
    loss = ops.softmax_cross_entropy(Tensor(logits), labels, 255)
    assert loss.item() < 1e-20  # noqa: PLR2004


def test_cross_entropy_errors() -> None:
    """All-ignored batches and foreign labels are rejected."""
    logits = Tensor(np.zeros((1, 3, 2, 2)))
    with pytest.raises(DegenerateBatchError):
        ops.softmax_cross_entropy(logits, np.full((1, 2, 2), 255), 255)
    with pytest.raises(DataError):
        ops.softmax_cross_entropy(logits, np.full((1, 2, 2), 3), 255)
    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(logits, np.zeros((1, 3, 3)), 255)


def test_non_finite_results_name_the_operator() -> None:
    """Overflowing exp reports the operator."""
    with pytest.raises(NonFiniteError, match="exp"):
        ops.exp(Tensor([1000.0]))


def test_elementwise_dispatch() -> None:
    """Named elementwise kinds map to their operators."""
    x = Tensor([-1.0, 2.0])
    assert_array_equal(ops.elementwise(x, "relu").data, [0.0, 2.0])
    assert_array_equal(ops.elementwise(x, "mul", 3.0).data, [-3.0, 6.0])
    with pytest.raises(ShapeError):
        ops.elementwise(x, "cosh")


def test_broadcast_mismatch() -> None:
    """Incompatible shapes are a shape error."""
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
