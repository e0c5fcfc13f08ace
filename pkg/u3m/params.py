# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Parameters."""

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import ConfigError
from .tensor import Array, Tensor
from .types import ParamName


@dataclass
class Parameter:
    """Named trainable tensor.

    The tensor requires a gradient exactly when the parameter is trainable, so
    frozen parameters never enter a tape.
    """

    name: ParamName
    tensor: Tensor
    trainable: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents of the parameter."""
        return self.tensor.shape


class ParameterStore:
    """Ordered, uniquely named collection of parameters."""

    def __init__(self) -> None:
        """Construct."""
        self._params: dict[ParamName, Parameter] = {}

    def __getitem__(self, name: ParamName) -> Tensor:
        """Get the tensor of ``name``."""
        try:
            return self._params[name].tensor
        except KeyError as error:
            msg = f"unknown parameter {name}"
            raise ConfigError(msg) from error

    def __contains__(self, name: ParamName) -> bool:
        """Check whether ``name`` is registered."""
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        """Iterate in registration order."""
        return iter(self._params.values())

    def __len__(self) -> int:
        """Get the number of parameters."""
        return len(self._params)

    def add(
        self,
        name: ParamName,
        data: npt.ArrayLike,
        *,
        trainable: bool = True,
    ) -> Parameter:
        """Register a new parameter."""
        if name in self._params:
            msg = f"parameter {name} is registered twice"
            raise ConfigError(msg)
        tensor = Tensor(data, requires_grad=trainable, name=name)
        parameter = Parameter(name=name, tensor=tensor, trainable=trainable)
        self._params[name] = parameter
        return parameter

    def parameter(self, name: ParamName) -> Parameter:
        """Get the parameter record of ``name``."""
        if name not in self._params:
            msg = f"unknown parameter {name}"
            raise ConfigError(msg)
        return self._params[name]

    def names(self) -> list[ParamName]:
        """Get all names in registration order."""
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        """Get the parameters an optimizer may update."""
        return [param for param in self if param.trainable]

    def assign(self, name: ParamName, data: npt.ArrayLike) -> None:
        """Replace the values of ``name`` keeping shape and trainability."""
        parameter = self.parameter(name)
        array = np.asarray(data, dtype=np.float64)
        if array.shape != parameter.shape:
            msg = f"parameter {name} has shape {parameter.shape}, got {array.shape}"
            raise ConfigError(msg)
        parameter.tensor = Tensor(array, requires_grad=parameter.trainable, name=name)

    def freeze(self, prefix: str) -> int:
        """Mark every parameter below ``prefix`` as not trainable."""
        frozen = 0
        for parameter in self:
            if parameter.name.startswith(f"{prefix}."):
                parameter.trainable = False
                parameter.tensor = Tensor(parameter.tensor.data, name=parameter.name)
                frozen += 1
        return frozen

    def scope(self, prefix: str) -> "ParamScope":
        """Get a view that resolves names relative to ``prefix``."""
        return ParamScope(self, prefix)

    def state(self) -> dict[ParamName, Array]:
        """Get a copy of every parameter's values."""
        return {param.name: param.tensor.numpy() for param in self}

    def copy(self) -> "ParameterStore":
        """Get an independent store with the same values and flags."""
        clone = ParameterStore()
        for param in self:
            clone.add(param.name, param.tensor.data, trainable=param.trainable)
        return clone

    def num_elements(self) -> int:
        """Get the total number of scalar parameters."""
        return int(np.sum([param.tensor.size for param in self]))


class ParamScope:
    """Prefix view on a :class:`ParameterStore`."""

    def __init__(self, store: ParameterStore, prefix: str) -> None:
        """Construct."""
        self.store = store
        self.prefix = prefix

    def name(self, key: str) -> ParamName:
        """Get the full name of ``key``."""
        return f"{self.prefix}.{key}" if self.prefix else key

    def __getitem__(self, key: str) -> Tensor:
        """Get the tensor of ``key``."""
        return self.store[self.name(key)]

    def __contains__(self, key: str) -> bool:
        """Check whether ``key`` exists below this scope."""
        return self.name(key) in self.store

    def scope(self, key: str) -> "ParamScope":
        """Get a nested scope."""
        return ParamScope(self.store, self.name(key))


class Initializer:
    """Creates parameters following the backbone's init conventions.

    Linear and attention weights draw from a normal distribution truncated at
    two standard deviations, convolutions from a fan-in scaled normal, biases
    start at zero and normalization affines at one and zero.
    """

    def __init__(
        self,
        store: ParameterStore,
        rng: np.random.Generator,
        std: float,
    ) -> None:
        """Construct."""
        self.store = store
        self.rng = rng
        self.std = std

    def truncated_normal(self, shape: tuple[int, ...]) -> Array:
        """Draw from N(0, std) truncated to [-2 std, 2 std]."""
        values = self.rng.normal(0.0, self.std, size=shape)
        outside = np.abs(values) > 2 * self.std
        while outside.any():
            values[outside] = self.rng.normal(0.0, self.std, size=int(outside.sum()))
            outside = np.abs(values) > 2 * self.std
        return values

    def linear(
        self,
        scope: ParamScope,
        in_features: int,
        out_features: int,
        *,
        weight: str = "w",
        bias: str | None = "b",
    ) -> None:
        """Register a ``[in, out]`` weight and an optional bias."""
        values = self.truncated_normal((in_features, out_features))
        self.store.add(scope.name(weight), values)
        if bias is not None:
            self.store.add(scope.name(bias), np.zeros(out_features))

    def conv(
        self,
        scope: ParamScope,
        out_channels: int,
        in_channels: int,
        kernel: int,
        *,
        groups: int = 1,
    ) -> None:
        """Register a ``[O, C/groups, k, k]`` kernel and its bias."""
        group_channels = in_channels // groups
        fan_in = group_channels * kernel * kernel
        shape = (out_channels, group_channels, kernel, kernel)
        self.store.add(
            scope.name("w"),
            self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape),
        )
        self.store.add(scope.name("b"), np.zeros(out_channels))

    def norm(self, scope: ParamScope, channels: int) -> None:
        """Register a layer-norm affine."""
        self.store.add(scope.name("gamma"), np.ones(channels))
        self.store.add(scope.name("beta"), np.zeros(channels))
