# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Tape tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from u3m import ops
from u3m.errors import NonFiniteError, ShapeError, TapeStateError
from u3m.tensor import Tape, Tensor, active_tape, backward, suspended


def test_backward_accumulates_reused_inputs() -> None:
    """A tensor used twice receives the sum of both contributions."""
    x = Tensor([1.0, -2.0], requires_grad=True, name="x")
    with Tape() as tape:
        loss = ops.sum(x * x + x * 3.0)
    grads = backward(tape, loss)
    assert_allclose(grads["x"].data, 2 * x.data + 3.0)


def test_backward_clears_the_tape() -> None:
    """A second backward on the same tape is rejected."""
    x = Tensor(2.0, requires_grad=True, name="x")
    with Tape() as tape:
        loss = x * x
    backward(tape, loss)
    assert tape.cleared
    assert len(tape) == 0
    with pytest.raises(TapeStateError):
        backward(tape, loss)


def test_backward_rejects_foreign_and_vector_losses() -> None:
    """The loss has to be a scalar produced on the tape."""
    x = Tensor([1.0, 2.0], requires_grad=True, name="x")
    with Tape() as first:
        vector = x * 2.0
    with pytest.raises(TapeStateError):
        backward(first, vector)
    with Tape() as second:
        ops.sum(x)
    with pytest.raises(TapeStateError):
        backward(second, ops.sum(Tensor([1.0])))


def test_recording_on_consumed_tape_fails() -> None:
    """Entering a tape after backward is an error."""
    x = Tensor(1.0, requires_grad=True)
    with Tape() as tape:
        loss = x * 1.0
    backward(tape, loss)
    with pytest.raises(TapeStateError), tape:
        pass


def test_suspended_records_nothing() -> None:
    """Operators inside ``suspended`` never reach the tape."""
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        with suspended():
            assert active_tape() is None
            y = x * 2.0
        assert active_tape() is tape
    assert len(tape) == 0
    assert not y.requires_grad


def test_constants_do_not_record() -> None:
    """Operators on tensors without gradients are not recorded."""
    with Tape() as tape:
        ops.exp(Tensor([0.0, 1.0]))
    assert len(tape) == 0


def test_unused_leaf_gets_zero_gradient() -> None:
    """Leaves that do not influence the loss get zeros."""
    x = Tensor([1.0, 2.0], requires_grad=True, name="x")
    y = Tensor([3.0], requires_grad=True, name="y")
    with Tape() as tape:
        ops.sum(y * 0.0)
        loss = ops.sum(x)
    grads = backward(tape, loss)
    assert_array_equal(grads["y"].data, [0.0])
    assert_array_equal(grads["x"].data, [1.0, 1.0])


def test_tensor_rejects_non_finite_values() -> None:
    """NaN and Inf never enter a tensor."""
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_item_needs_one_element() -> None:
    """``item`` refuses arrays."""
    assert Tensor([[4.0]]).item() == 4.0  # noqa: PLR2004
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_backward_is_reproducible() -> None:
    """Two identical passes give bit-identical gradients."""

    def run() -> np.ndarray:
        x = Tensor(np.linspace(-1, 1, 12).reshape(3, 4), requires_grad=True, name="x")
        with Tape() as tape:
            loss = ops.sum(ops.softmax(ops.matmul(x, ops.transpose(x, (1, 0)))))
        return backward(tape, loss)["x"].data

    assert_array_equal(run(), run())
