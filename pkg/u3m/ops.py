# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Differentiable operators.

Every operator computes its result with numpy, checks that it is finite and,
when a tape is active and an operand requires a gradient, records a
vector-Jacobian product on the tape. Convolutions follow the
cross-correlation convention, GELU uses the tanh approximation and bilinear
resampling uses the align-corners=false convention.
"""

import math
from functools import cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DegenerateBatchError, NonFiniteError, ShapeError
from .tensor import VJP, Array, Tensor, active_tape

GELU_COEFF = 0.044715
"""Cubic coefficient of the tanh approximation of GELU."""

GELU_SCALE = math.sqrt(2.0 / math.pi)
"""Scale inside the tanh approximation of GELU."""


def as_tensor(value: Tensor | float | Array) -> Tensor:
    """Wrap constants, pass tensors through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def apply(kind: str, inputs: tuple[Tensor, ...], result: Array, vjp: VJP) -> Tensor:
    """Wrap ``result`` and record it on the active tape."""
    if not np.isfinite(result).all():
        msg = f"{kind} produced non-finite values"
        raise NonFiniteError(msg)
    output = Tensor(result, copy=False)
    tape = active_tape()
    if tape is not None and any(tensor.requires_grad for tensor in inputs):
        output.requires_grad = True
        tape.record(kind, inputs, output, vjp)
    return output


def _broadcast_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as error:
        msg = f"{kind}: shapes {a.shape} and {b.shape} do not broadcast"
        raise ShapeError(msg) from error


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Add elementwise with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("add", a, b)

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad, a.shape) if needs[0] else None,
            unbroadcast(grad, b.shape) if needs[1] else None,
        )

    return apply("add", (a, b), a.data + b.data, vjp)


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Subtract elementwise with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("sub", a, b)

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad, a.shape) if needs[0] else None,
            unbroadcast(-grad, b.shape) if needs[1] else None,
        )

    return apply("sub", (a, b), a.data - b.data, vjp)


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Multiply elementwise with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("mul", a, b)

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad * b.data, a.shape) if needs[0] else None,
            unbroadcast(grad * a.data, b.shape) if needs[1] else None,
        )

    return apply("mul", (a, b), a.data * b.data, vjp)


def div(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Divide elementwise with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("div", a, b)
    result = a.data / b.data

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        return (
            unbroadcast(grad / b.data, a.shape) if needs[0] else None,
            unbroadcast(-grad * result / b.data, b.shape) if needs[1] else None,
        )

    return apply("div", (a, b), result, vjp)


def neg(x: Tensor) -> Tensor:
    """Negate."""
    return apply("neg", (x,), -x.data, lambda grad, _: (-grad,))


def exp(x: Tensor) -> Tensor:
    """Exponentiate elementwise."""
    result = np.exp(x.data)
    return apply("exp", (x,), result, lambda grad, _: (grad * result,))


def log(x: Tensor) -> Tensor:
    """Natural logarithm elementwise."""
    return apply("log", (x,), np.log(x.data), lambda grad, _: (grad / x.data,))


def relu(x: Tensor) -> Tensor:
    """Rectify."""
    mask = x.data > 0
    return apply("relu", (x,), x.data * mask, lambda grad, _: (grad * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, saturating without overflow."""
    result = np.exp(-np.logaddexp(0.0, -x.data))
    derivative = result * (1.0 - result)
    return apply("sigmoid", (x,), result, lambda grad, _: (grad * derivative,))


def gelu(x: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    value = x.data
    inner = GELU_SCALE * (value + GELU_COEFF * value**3)
    tanh = np.tanh(inner)
    result = 0.5 * value * (1.0 + tanh)

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        slope = GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * value**2)
        return (grad * (0.5 * (1.0 + tanh) + 0.5 * value * (1.0 - tanh**2) * slope),)

    return apply("gelu", (x,), result, vjp)


ELEMENTWISE = {
    "gelu": gelu,
    "sigmoid": sigmoid,
    "relu": relu,
    "add": add,
    "mul": mul,
}
"""Elementwise kinds reachable through :func:`elementwise`."""


def elementwise(x: Tensor, kind: str, other: Tensor | float | None = None) -> Tensor:
    """Apply the elementwise operator ``kind``."""
    try:
        func = ELEMENTWISE[kind]
    except KeyError as error:
        msg = f"unknown elementwise kind {kind!r}"
        raise ShapeError(msg) from error
    if kind in ("add", "mul"):
        if other is None:
            msg = f"{kind} needs a second operand"
            raise ShapeError(msg)
        return func(x, other)
    return func(x)


def sum(  # noqa: A001
    x: Tensor,
    axis: int | tuple[int, ...] | None = None,
    *,
    keepdims: bool = False,
) -> Tensor:
    """Sum over ``axis`` (all axes by default)."""
    result = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        if not keepdims and axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return apply("sum", (x,), np.asarray(result), vjp)


def mean(
    x: Tensor,
    axis: int | tuple[int, ...] | None = None,
    *,
    keepdims: bool = False,
) -> Tensor:
    """Average over ``axis`` (all axes by default)."""
    total = sum(x, axis, keepdims=keepdims)
    return total / (x.size / max(total.size, 1))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reshape without reordering."""
    if len(shape) == 1 and isinstance(shape[0], tuple):
        shape = shape[0]
    try:
        result = x.data.reshape(shape)
    except ValueError as error:
        msg = f"reshape: cannot view shape {x.shape} as {shape}"
        raise ShapeError(msg) from error
    return apply("reshape", (x,), result, lambda grad, _: (grad.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Permute axes."""
    if len(axes) == 1 and isinstance(axes[0], tuple):
        axes = axes[0]
    if sorted(axes) != list(range(x.ndim)):
        msg = f"transpose: {axes} is not a permutation of the axes of {x.shape}"
        raise ShapeError(msg)
    inverse = tuple(np.argsort(axes))
    result = np.transpose(x.data, axes)
    return apply("transpose", (x,), result, lambda grad, _: (grad.transpose(inverse),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``."""
    try:
        result = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError as error:
        shapes = [tensor.shape for tensor in tensors]
        msg = f"concat: shapes {shapes} disagree off axis {axis}"
        raise ShapeError(msg) from error
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        parts = np.split(grad, bounds, axis=axis)
        return tuple(
            part if need else None for part, need in zip(parts, needs, strict=True)
        )

    return apply("concat", tuple(tensors), result, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Contract ``a[..., m, k]`` with ``b[..., k, n]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:  # noqa: PLR2004
        msg = f"matmul: shapes {a.shape} and {b.shape} do not contract"
        raise ShapeError(msg)
    try:
        result = np.matmul(a.data, b.data)
    except ValueError as error:
        msg = f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast"
        raise ShapeError(msg) from error

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        grad_a = grad_b = None
        if needs[0]:
            grad_a = unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if needs[1]:
            grad_b = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return grad_a, grad_b

    return apply("matmul", (a, b), result, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Apply ``x @ weight + bias`` over the last axis of ``x``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def conv2d(  # noqa: PLR0913
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    *,
    groups: int = 1,
    exact: bool = True,
) -> Tensor:
    """Cross-correlate ``x[B,C,H,W]`` with ``weight[O,C/groups,k,k]``.

    ``groups`` is either 1 (dense) or C (depthwise, O == C). With ``exact``
    the output extent ``(H + 2 pad - k) / stride + 1`` has to be integral;
    without it the trailing rows and columns that do not fill a stride are
    dropped.
    """
    if x.ndim != 4 or weight.ndim != 4:  # noqa: PLR2004
        msg = f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}"
        raise ShapeError(msg)
    _, channels, height, width = x.shape
    out_channels, group_channels, kernel, kernel_w = weight.shape
    depthwise = groups != 1
    if kernel != kernel_w:
        msg = f"conv2d: kernel must be square, got {weight.shape}"
        raise ShapeError(msg)
    if depthwise and (groups != channels or out_channels != channels):
        msg = f"conv2d: groups={groups} must be 1 or depthwise for input {x.shape}"
        raise ShapeError(msg)
    if channels != group_channels * groups:
        msg = f"conv2d: weight {weight.shape} does not match input {x.shape}"
        raise ShapeError(msg)
    spans = (height + 2 * pad - kernel, width + 2 * pad - kernel)
    if min(spans) < 0 or (exact and (spans[0] % stride or spans[1] % stride)):
        msg = (
            f"conv2d: input {x.shape} with kernel {kernel}, stride {stride}, "
            f"pad {pad} has no integral output extent"
        )
        raise ShapeError(msg)
    out_h, out_w = spans[0] // stride + 1, spans[1] // stride + 1

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, : stride * out_h : stride, : stride * out_w : stride]
    if depthwise:
        result = np.einsum("bchwij,cij->bchw", windows, weight.data[:, 0])
    else:
        result = np.einsum("bchwij,ocij->bohw", windows, weight.data, optimize=True)
    inputs = (x, weight)
    if bias is not None:
        if bias.shape != (out_channels,):
            msg = f"conv2d: bias {bias.shape} does not match {out_channels} outputs"
            raise ShapeError(msg)
        result = result + bias.data[None, :, None, None]
        inputs = (x, weight, bias)

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        grad_x = grad_w = grad_b = None
        if needs[0]:
            if depthwise:
                grad_windows = np.einsum("bchw,cij->bchwij", grad, weight.data[:, 0])
            else:
                grad_windows = np.einsum(
                    "bohw,ocij->bchwij",
                    grad,
                    weight.data,
                    optimize=True,
                )
            grad_padded = np.zeros_like(padded)
            for i in range(kernel):
                for j in range(kernel):
                    grad_padded[
                        :,
                        :,
                        i : i + stride * out_h : stride,
                        j : j + stride * out_w : stride,
                    ] += grad_windows[..., i, j]
            grad_x = grad_padded[:, :, pad : pad + height, pad : pad + width]
        if needs[1]:
            if depthwise:
                grad_w = np.einsum("bchwij,bchw->cij", windows, grad)[:, None]
            else:
                grad_w = np.einsum("bchwij,bohw->ocij", windows, grad, optimize=True)
        if len(needs) > 2 and needs[2]:  # noqa: PLR2004
            grad_b = grad.sum(axis=(0, 2, 3))
        return (grad_x, grad_w, grad_b)[: len(needs)]

    return apply("conv2d", inputs, result, vjp)


@cache
def pooling_matrix(extent: int, bins: int) -> Array:
    """Averaging operator of adaptive pooling along one axis.

    Bin ``i`` averages the window ``[floor(i E / bins), ceil((i + 1) E / bins))``.
    """
    matrix = np.zeros((bins, extent))
    for index in range(bins):
        start = (index * extent) // bins
        stop = -((-(index + 1) * extent) // bins)
        matrix[index, start:stop] = 1.0 / (stop - start)
    matrix.flags.writeable = False
    return matrix


@cache
def interpolation_matrix(extent: int, out_extent: int) -> Array:
    """Linear interpolation operator along one axis, align-corners=false."""
    matrix = np.zeros((out_extent, extent))
    scale = extent / out_extent
    for index in range(out_extent):
        source = max((index + 0.5) * scale - 0.5, 0.0)
        low = min(math.floor(source), extent - 1)
        high = min(low + 1, extent - 1)
        weight = source - low
        matrix[index, low] += 1.0 - weight
        matrix[index, high] += weight
    matrix.flags.writeable = False
    return matrix


def _separable(kind: str, x: Tensor, rows: Array, cols: Array) -> Tensor:
    """Apply ``rows @ x @ cols.T`` over the two trailing axes."""
    result = np.matmul(np.matmul(rows, x.data), cols.T)

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        return (np.matmul(np.matmul(rows.T, grad), cols),)

    return apply(kind, (x,), result, vjp)


def adaptive_avg_pool2d(x: Tensor, bins: int) -> Tensor:
    """Average ``x[B,C,H,W]`` into ``bins x bins`` cells."""
    if x.ndim != 4:  # noqa: PLR2004
        msg = f"adaptive_avg_pool2d: expected a 4-d input, got {x.shape}"
        raise ShapeError(msg)
    height, width = x.shape[-2:]
    if bins < 1 or bins > height or bins > width:
        msg = f"adaptive_avg_pool2d: {bins} bins do not fit a {height}x{width} map"
        raise ShapeError(msg)
    if bins == height == width:
        return reshape(x, x.shape)
    return _separable(
        "adaptive_avg_pool2d",
        x,
        pooling_matrix(height, bins),
        pooling_matrix(width, bins),
    )


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize ``x[B,C,h,w]`` to ``out_h x out_w`` by bilinear interpolation."""
    if x.ndim != 4:  # noqa: PLR2004
        msg = f"bilinear_upsample: expected a 4-d input, got {x.shape}"
        raise ShapeError(msg)
    height, width = x.shape[-2:]
    if out_h < height or out_w < width:
        msg = f"bilinear_upsample: cannot shrink {height}x{width} to {out_h}x{out_w}"
        raise ShapeError(msg)
    if (out_h, out_w) == (height, width):
        return reshape(x, x.shape)
    return _separable(
        "bilinear_upsample",
        x,
        interpolation_matrix(height, out_h),
        interpolation_matrix(width, out_w),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponential along ``axis``, max-subtracted."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    result = exps / exps.sum(axis=axis, keepdims=True)

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        inner = (grad * result).sum(axis=axis, keepdims=True)
        return (result * (grad - inner),)

    return apply("softmax", (x,), result, vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Logarithm of :func:`softmax`, computed without forming the ratio."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    result = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        return (grad - np.exp(result) * grad.sum(axis=axis, keepdims=True),)

    return apply("log_softmax", (x,), result, vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        msg = f"layer_norm: affine {gamma.shape}/{beta.shape} does not fit {x.shape}"
        raise ShapeError(msg)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    result = normed * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def vjp(grad: Array, needs: tuple[bool, ...]) -> tuple[Array | None, ...]:
        grad_x = None
        if needs[0]:
            grad_normed = grad * gamma.data
            grad_x = inv_std * (
                grad_normed
                - grad_normed.mean(axis=-1, keepdims=True)
                - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
            )
        grad_gamma = (grad * normed).sum(axis=lead) if needs[1] else None
        grad_beta = grad.sum(axis=lead) if needs[2] else None
        return grad_x, grad_gamma, grad_beta

    return apply("layer_norm", (x, gamma, beta), result, vjp)


def channel_layer_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-6,
) -> Tensor:
    """Apply :func:`layer_norm` over the channel axis of ``x[B,C,H,W]``."""
    channels_last = transpose(x, (0, 2, 3, 1))
    return transpose(layer_norm(channels_last, gamma, beta, eps), (0, 3, 1, 2))


def flatten_tokens(x: Tensor) -> Tensor:
    """Turn a map ``[B,C,H,W]`` into a token sequence ``[B,H*W,C]``."""
    batch, channels, height, width = x.shape
    return transpose(reshape(x, (batch, channels, height * width)), (0, 2, 1))


def unflatten_tokens(x: Tensor, height: int, width: int) -> Tensor:
    """Turn a token sequence ``[B,H*W,C]`` back into a map ``[B,C,H,W]``."""
    batch, tokens, channels = x.shape
    if tokens != height * width:
        msg = f"cannot fold {tokens} tokens into a {height}x{width} map"
        raise ShapeError(msg)
    return reshape(transpose(x, (0, 2, 1)), (batch, channels, height, width))


def pointwise(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Mix channels of ``x[B,C,H,W]`` with ``weight[C,O]`` at every position."""
    channels_last = transpose(x, (0, 2, 3, 1))
    return transpose(linear(channels_last, weight, bias), (0, 3, 1, 2))


def softmax_cross_entropy(
    logits: Tensor,
    labels: Array,
    ignore_index: int,
) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``logits[B,N,...]``.

    Pixels labeled ``ignore_index`` do not contribute.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = logits.shape[1]
    if labels.shape != (logits.shape[0], *logits.shape[2:]):
        msg = f"cross entropy: labels {labels.shape} do not match logits {logits.shape}"
        raise ShapeError(msg)
    valid = labels != ignore_index
    invalid = valid & ((labels < 0) | (labels >= classes))
    if invalid.any():
        position = tuple(int(index) for index in np.argwhere(invalid)[0])
        msg = f"label {labels[position]} at {position} is not a class of {classes}"
        raise DataError(msg)
    counted = int(valid.sum())
    if counted == 0:
        msg = "every pixel of the batch is ignored"
        raise DegenerateBatchError(msg)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    safe = np.where(valid, labels, 0)[:, None]
    picked = np.take_along_axis(log_probs, safe, axis=1)[:, 0]
    result = np.asarray(-(picked * valid).sum() / counted)

    def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
        probs = np.exp(log_probs)
        np.put_along_axis(probs, safe, np.take_along_axis(probs, safe, 1) - 1.0, 1)
        return (grad * probs * valid[:, None] / counted,)

    return apply("cross_entropy", (logits,), result, vjp)
