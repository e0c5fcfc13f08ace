# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Tensor values and the reverse-mode tape.

A :class:`Tensor` wraps a ``float64`` numpy array and never changes after
construction. Operators in :mod:`u3m.ops` record themselves on the active
:class:`Tape` when at least one operand requires a gradient, and
:func:`backward` walks the recorded entries in reverse order.

>>> from u3m import ops
>>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True, name="x")
>>> with Tape() as tape:
...     loss = ops.sum(x * x)
>>> backward(tape, loss)["x"].data.tolist()
[2.0, 4.0, 6.0]
"""

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from itertools import count
from types import TracebackType
from typing import Self

import numpy as np
import numpy.typing as npt

from .errors import NonFiniteError, ShapeError, TapeStateError

Array = npt.NDArray[np.float64]
"""Storage of every tensor."""

VJP = Callable[[Array, tuple[bool, ...]], tuple[Array | None, ...]]
"""Maps the output gradient to one gradient per input (``None`` if unneeded)."""

_node_ids = count()

_active_tape: ContextVar["Tape | None"] = ContextVar("u3m_active_tape", default=None)


class Tensor:
    """N-dimensional float64 array with optional tape participation."""

    __slots__ = ("data", "name", "node_id", "requires_grad")

    __array_priority__ = 100

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        copy: bool = True,
    ) -> None:
        """Construct."""
        if copy:
            array = np.array(data, dtype=np.float64)
        else:
            array = np.asarray(data, dtype=np.float64)
        if not np.isfinite(array).all():
            label = f" {name}" if name else ""
            msg = f"tensor{label} holds non-finite values"
            raise NonFiniteError(msg)
        self.data: Array = array
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_node_ids)

    def __repr__(self) -> str:
        """Represent."""
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def key(self) -> str:
        """Key of this tensor in the mapping returned by :func:`backward`."""
        return self.name if self.name is not None else f"#{self.node_id}"

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents, row-major."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Rank."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.data.size

    def numpy(self) -> Array:
        """Get a copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        """Get the value of a one-element tensor."""
        if self.size != 1:
            msg = f"item() needs exactly one element, got shape {self.shape}"
            raise ShapeError(msg)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Get a tensor with the same values that never records gradients."""
        return Tensor(self.data, copy=False)

    def __add__(self, other: "Tensor | float") -> "Tensor":
        """Add."""
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other: float) -> "Tensor":
        """Add from the right."""
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        """Subtract."""
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other: float) -> "Tensor":
        """Subtract from the right."""
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        """Multiply elementwise."""
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other: float) -> "Tensor":
        """Multiply elementwise from the right."""
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other: "Tensor | float") -> "Tensor":
        """Divide elementwise."""
        from . import ops

        return ops.div(self, other)

    def __neg__(self) -> "Tensor":
        """Negate."""
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        """Contract the last axis of self with the second to last of other."""
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        """Reshape."""
        from . import ops

        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        """Permute axes."""
        from . import ops

        return ops.transpose(self, axes)


@dataclass(frozen=True)
class TapeEntry:
    """One recorded operator application."""

    kind: str
    inputs: tuple[int, ...]
    needs: tuple[bool, ...]
    output: int
    vjp: VJP


class Tape:
    """Ordered record of the operators of one forward pass.

    Entries are appended in execution order, so every input node precedes its
    consumer. The tape is confined to the thread that entered it and is
    cleared by :func:`backward`.
    """

    def __init__(self) -> None:
        """Construct."""
        self.entries: list[TapeEntry] = []
        self._leaves: dict[int, Tensor] = {}
        self._produced: set[int] = set()
        self._cleared = False
        self._token = None

    def __enter__(self) -> Self:
        """Make this the tape operators record on."""
        if self._cleared:
            msg = "cannot record on a tape that was already consumed by backward"
            raise TapeStateError(msg)
        self._token = _active_tape.set(self)
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        """Stop recording."""
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        """Get the number of recorded entries."""
        return len(self.entries)

    @property
    def cleared(self) -> bool:
        """Whether backward already consumed this tape."""
        return self._cleared

    @property
    def leaves(self) -> list[Tensor]:
        """Tensors that require a gradient but were not produced on this tape."""
        return list(self._leaves.values())

    def produced(self, tensor: Tensor) -> bool:
        """Check whether ``tensor`` is the output of a recorded entry."""
        return tensor.node_id in self._produced

    def record(
        self,
        kind: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        vjp: VJP,
    ) -> None:
        """Append an entry for ``output = kind(*inputs)``."""
        if self._cleared:
            msg = f"cannot record {kind} on a cleared tape"
            raise TapeStateError(msg)
        for tensor in inputs:
            if tensor.requires_grad and tensor.node_id not in self._produced:
                self._leaves.setdefault(tensor.node_id, tensor)
        entry = TapeEntry(
            kind=kind,
            inputs=tuple(tensor.node_id for tensor in inputs),
            needs=tuple(tensor.requires_grad for tensor in inputs),
            output=output.node_id,
            vjp=vjp,
        )
        self.entries.append(entry)
        self._produced.add(output.node_id)

    def clear(self) -> None:
        """Drop all entries and saved activations."""
        self.entries.clear()
        self._leaves.clear()
        self._produced.clear()
        self._cleared = True


def active_tape() -> Tape | None:
    """Get the tape of the current context, if any."""
    return _active_tape.get()


@contextmanager
def suspended() -> Iterator[None]:
    """Evaluate operators without recording them."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Differentiate ``loss`` with respect to every leaf of ``tape``.

    The result maps :attr:`Tensor.key` (the parameter name for parameters) to
    the gradient. Contributions are accumulated in reverse tape order, which
    makes the result bit-reproducible. The tape is cleared afterwards.
    """
    if tape.cleared:
        msg = "backward called on a cleared tape"
        raise TapeStateError(msg)
    if loss.size != 1:
        msg = f"loss must be a scalar, got shape {loss.shape}"
        raise TapeStateError(msg)
    if not tape.produced(loss):
        msg = "loss was not produced on this tape"
        raise TapeStateError(msg)

    grads: dict[int, Array] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        grad = grads.pop(entry.output, None)
        if grad is None:
            continue
        for node_id, needed, input_grad in zip(
            entry.inputs,
            entry.needs,
            entry.vjp(grad, entry.needs),
            strict=True,
        ):
            if not needed or input_grad is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + input_grad
            else:
                grads[node_id] = input_grad

    result = {}
    for leaf in tape.leaves:
        grad = grads.get(leaf.node_id, np.zeros_like(leaf.data))
        result[leaf.key] = Tensor(grad, copy=False)
    tape.clear()
    return result
