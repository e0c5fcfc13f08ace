# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Finite-difference gradient checks.

:func:`grad_check` compares the tape gradients of a scalar function with
central differences on a seeded subsample of coordinates. The registered
suite covers every operator on three shapes and the encoder, the fusion
blocks, the head and the assembled model on desk-scale shapes.
"""

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from . import ops
from .config import (
    U3M_GRADCHECK_COORDS,
    U3M_GRADCHECK_EPS,
    U3M_GRADCHECK_TOLERANCE,
    U3M_IGNORE_INDEX,
)
from .encoder import encode, init_encoder
from .errors import ConfigError, EvaluationError, NonFiniteError
from .fusion import fusion_block, init_fusion, stage_pool_bins
from .head import decode, init_head
from .model import U3M
from .params import Initializer, Parameter, ParameterStore
from .tensor import Tape, Tensor, backward, suspended
from .types import DataConfig, EncoderConfig, FusionConfig, HeadConfig, ModelConfig

logger = logging.getLogger(__name__)

EPS_RANGE = (1e-7, 1e-3)
"""Accepted central-difference steps."""

Objective = Callable[[], Tensor]
"""Deterministic scalar function of the checked tensors."""


@dataclass(frozen=True)
class GradCheckReport:
    """Worst disagreement between tape and finite-difference gradients."""

    max_rel_err: float
    max_abs_err: float
    coordinates: int
    worst: str = ""


@dataclass(frozen=True)
class GradCase:
    """One registered gradient check."""

    module: str
    name: str
    build: Callable[[np.random.Generator], tuple[Objective, list[Tensor]]]
    coords: int = U3M_GRADCHECK_COORDS


@dataclass(frozen=True)
class SuiteResult:
    """Outcome of one :class:`GradCase`."""

    case: GradCase
    report: GradCheckReport
    tolerance: float

    @property
    def passed(self) -> bool:
        """Whether the relative error stays below the tolerance."""
        return self.report.max_rel_err < self.tolerance


SUITE: dict[str, list[GradCase]] = {}
"""Registered cases, grouped by module."""

MODULES = ("ops", "encoder", "fusion", "head", "model")
"""Module names accepted by :func:`run_suite`."""


def _evaluate(objective: Objective) -> float:
    try:
        value = objective()
    except NonFiniteError as error:
        msg = f"objective is not finite: {error}"
        raise EvaluationError(msg) from error
    return value.item()


def check_gradients(
    objective: Objective,
    params: Iterable[Tensor | Parameter],
    eps: float = U3M_GRADCHECK_EPS,
    *,
    coords: int = U3M_GRADCHECK_COORDS,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape and central-difference gradients of ``objective``.

    Up to ``coords`` coordinates per tensor are drawn with ``seed``. Each is
    perturbed in place and restored afterwards. Tensors that do not require
    a gradient are skipped.
    """
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        msg = f"gradient check step {eps} is outside {EPS_RANGE}"
        raise ConfigError(msg)
    tensors = [
        param.tensor if isinstance(param, Parameter) else param for param in params
    ]

    with Tape() as tape:
        try:
            loss = objective()
        except NonFiniteError as error:
            msg = f"objective is not finite: {error}"
            raise EvaluationError(msg) from error
    grads = backward(tape, loss)

    rng = np.random.default_rng(seed)
    max_rel = max_abs = 0.0
    worst = ""
    checked = 0
    with suspended():
        for tensor in tensors:
            if not tensor.requires_grad:
                continue
            analytic = grads.get(tensor.key)
            analytic = np.zeros(tensor.shape) if analytic is None else analytic.numpy()
            size = min(coords, tensor.size)
            picks = rng.choice(tensor.size, size=size, replace=False)
            for flat in picks:
                index = np.unravel_index(flat, tensor.shape)
                original = tensor.data[index]
                tensor.data[index] = original + eps
                try:
                    plus = _evaluate(objective)
                    tensor.data[index] = original - eps
                    minus = _evaluate(objective)
                finally:
                    tensor.data[index] = original
                numeric = (plus - minus) / (2.0 * eps)
                exact = analytic[index]
                error = abs(exact - numeric)
                scale = max(abs(exact), abs(numeric), 1e-8)
                checked += 1
                max_abs = max(max_abs, error)
                if error / scale > max_rel:
                    max_rel = error / scale
                    worst = f"{tensor.key}{list(map(int, index))}"
    return GradCheckReport(max_rel, max_abs, checked, worst)


def grad_check(
    objective: Objective,
    params: Iterable[Tensor | Parameter],
    eps: float = U3M_GRADCHECK_EPS,
    *,
    coords: int = U3M_GRADCHECK_COORDS,
    seed: int = 0,
) -> float:
    """Get the maximal relative gradient error, see :func:`check_gradients`."""
    report = check_gradients(objective, params, eps, coords=coords, seed=seed)
    return report.max_rel_err


def register(
    module: str,
    name: str,
    *,
    coords: int = U3M_GRADCHECK_COORDS,
) -> Callable:
    """Register a case builder under ``module``."""

    def decorator(
        build: Callable[[np.random.Generator], tuple[Objective, list[Tensor]]],
    ) -> Callable:
        SUITE.setdefault(module, []).append(GradCase(module, name, build, coords))
        return build

    return decorator


def run_suite(
    module: str | None = None,
    *,
    eps: float = U3M_GRADCHECK_EPS,
    tolerance: float = U3M_GRADCHECK_TOLERANCE,
    seed: int = 0,
) -> list[SuiteResult]:
    """Run every registered case, or those of ``module``."""
    if module is not None and module not in MODULES:
        msg = f"unknown gradcheck module {module!r}, expected one of {MODULES}"
        raise ConfigError(msg)
    results = []
    for group in MODULES:
        if module is not None and group != module:
            continue
        for case in SUITE.get(group, []):
            objective, tensors = case.build(np.random.default_rng(seed))
            report = check_gradients(
                objective,
                tensors,
                eps,
                coords=case.coords,
                seed=seed,
            )
            result = SuiteResult(case, report, tolerance)
            msg = "gradcheck %s.%s: max rel err %.3e over %d coordinates"
            logger.info(msg, group, case.name, report.max_rel_err, report.coordinates)
            results.append(result)
    return results


def _leaf(
    rng: np.random.Generator,
    name: str,
    shape: tuple[int, ...],
    *,
    offset: float = 0.0,
    positive: bool = False,
) -> Tensor:
    values = rng.normal(size=shape)
    if positive:
        values = np.abs(values)
    values = values + np.sign(values) * offset if offset else values
    return Tensor(values, requires_grad=True, name=name)


def _weighted(out: Tensor, rng: np.random.Generator) -> Objective:
    weights = Tensor(rng.normal(size=out.shape))
    return lambda value: ops.sum(value * weights)


def _unary(
    kind: str,
    func: Callable[[Tensor], Tensor],
    **leaf: float | bool,
) -> None:
    for shape in ((4,), (2, 3), (2, 3, 4)):

        @register("ops", f"{kind}{list(shape)}")
        def build(
            rng: np.random.Generator,
            shape: tuple[int, ...] = shape,
        ) -> tuple[Objective, list[Tensor]]:
            x = _leaf(rng, "x", shape, **leaf)
            weigh = _weighted(func(x), rng)
            return lambda: weigh(func(x)), [x]


def _binary(kind: str, func: Callable[[Tensor, Tensor], Tensor]) -> None:
    for shapes in (((3,), (3,)), ((2, 3), (3,)), ((2, 1, 4), (3, 1))):

        @register("ops", f"{kind}{list(shapes)}")
        def build(
            rng: np.random.Generator,
            shapes: tuple[tuple[int, ...], ...] = shapes,
        ) -> tuple[Objective, list[Tensor]]:
            a = _leaf(rng, "a", shapes[0])
            b = _leaf(rng, "b", shapes[1], positive=kind == "div", offset=0.5)
            weigh = _weighted(func(a, b), rng)
            return lambda: weigh(func(a, b)), [a, b]


_unary("neg", ops.neg)
_unary("exp", ops.exp)
_unary("log", ops.log, positive=True, offset=0.5)
_unary("relu", ops.relu, offset=0.1)
_unary("sigmoid", ops.sigmoid)
_unary("gelu", ops.gelu)
_unary("softmax", ops.softmax)
_unary("log_softmax", ops.log_softmax)
_unary("sum_last", lambda x: ops.sum(x, axis=-1))
_unary("mean_first", lambda x: ops.mean(x, axis=0))
_unary("reshape", lambda x: ops.reshape(x, (-1,)))
_unary("transpose", lambda x: ops.transpose(x, tuple(reversed(range(x.ndim)))))
_binary("add", ops.add)
_binary("sub", ops.sub)
_binary("mul", ops.mul)
_binary("div", ops.div)

_MATMUL_SHAPES = (((2, 3), (3, 4)), ((2, 2, 3), (3, 2)), ((1, 4, 4), (2, 4, 1)))
_CONV_CASES = (
    ((1, 2, 5, 5), (3, 2, 3, 3), 1, 1, 1),
    ((2, 3, 9, 9), (4, 3, 3, 3), 2, 1, 1),
    ((1, 4, 6, 6), (4, 1, 5, 5), 1, 2, 4),
)
_POOL_CASES = (((1, 2, 6, 6), 2), ((2, 1, 7, 5), 3), ((1, 3, 4, 4), 1))
_UPSAMPLE_CASES = (((1, 2, 2, 2), 4, 4), ((1, 1, 3, 5), 7, 9), ((2, 2, 4, 4), 16, 16))
_NORM_SHAPES = ((2, 5), (2, 3, 4), (1, 4, 4, 8))
_CROSS_ENTROPY_SHAPES = ((2, 3, 2, 2), (1, 4, 3, 3), (3, 2, 1, 5))

for _shapes in _MATMUL_SHAPES:

    @register("ops", f"matmul{list(_shapes)}")
    def _matmul(
        rng: np.random.Generator,
        shapes: tuple[tuple[int, ...], ...] = _shapes,
    ) -> tuple[Objective, list[Tensor]]:
        a, b = _leaf(rng, "a", shapes[0]), _leaf(rng, "b", shapes[1])
        weigh = _weighted(ops.matmul(a, b), rng)
        return lambda: weigh(ops.matmul(a, b)), [a, b]


for _x_shape, _w_shape, _stride, _pad, _groups in _CONV_CASES:

    @register("ops", f"conv2d{list(_x_shape)}")
    def _conv(  # noqa: PLR0913
        rng: np.random.Generator,
        x_shape: tuple[int, ...] = _x_shape,
        w_shape: tuple[int, ...] = _w_shape,
        stride: int = _stride,
        pad: int = _pad,
        groups: int = _groups,
    ) -> tuple[Objective, list[Tensor]]:
        x, w = _leaf(rng, "x", x_shape), _leaf(rng, "w", w_shape)
        b = _leaf(rng, "b", (w_shape[0],))

        def forward() -> Tensor:
            return ops.conv2d(x, w, b, stride, pad, groups=groups)

        weigh = _weighted(forward(), rng)
        return lambda: weigh(forward()), [x, w, b]


for _shape, _bins in _POOL_CASES:

    @register("ops", f"adaptive_avg_pool2d{list(_shape)}")
    def _pool(
        rng: np.random.Generator,
        shape: tuple[int, ...] = _shape,
        bins: int = _bins,
    ) -> tuple[Objective, list[Tensor]]:
        x = _leaf(rng, "x", shape)
        weigh = _weighted(ops.adaptive_avg_pool2d(x, bins), rng)
        return lambda: weigh(ops.adaptive_avg_pool2d(x, bins)), [x]


for _shape, _out_h, _out_w in _UPSAMPLE_CASES:

    @register("ops", f"bilinear_upsample{list(_shape)}")
    def _upsample(
        rng: np.random.Generator,
        shape: tuple[int, ...] = _shape,
        size: tuple[int, int] = (_out_h, _out_w),
    ) -> tuple[Objective, list[Tensor]]:
        x = _leaf(rng, "x", shape)
        weigh = _weighted(ops.bilinear_upsample(x, *size), rng)
        return lambda: weigh(ops.bilinear_upsample(x, *size)), [x]


for _shape in _NORM_SHAPES:

    @register("ops", f"layer_norm{list(_shape)}")
    def _norm(
        rng: np.random.Generator,
        shape: tuple[int, ...] = _shape,
    ) -> tuple[Objective, list[Tensor]]:
        x = _leaf(rng, "x", shape)
        gamma, beta = _leaf(rng, "gamma", shape[-1:]), _leaf(rng, "beta", shape[-1:])
        weigh = _weighted(ops.layer_norm(x, gamma, beta), rng)
        return lambda: weigh(ops.layer_norm(x, gamma, beta)), [x, gamma, beta]


for _shape in _CROSS_ENTROPY_SHAPES:

    @register("ops", f"cross_entropy{list(_shape)}")
    def _cross_entropy(
        rng: np.random.Generator,
        shape: tuple[int, ...] = _shape,
    ) -> tuple[Objective, list[Tensor]]:
        logits = _leaf(rng, "logits", shape)
        labels = rng.integers(0, shape[1], size=(shape[0], *shape[2:]))
        labels.reshape(-1)[0] = U3M_IGNORE_INDEX
        return (
            lambda: ops.softmax_cross_entropy(logits, labels, U3M_IGNORE_INDEX),
            [logits],
        )


_CONCAT_CASES = (
    ((3,), (2,)),
    ((2, 1, 3), (2, 2, 3), (2, 3, 3)),
    ((1, 2, 2, 2), (1, 1, 2, 2)),
)

for _shapes in _CONCAT_CASES:

    @register("ops", f"concat{list(_shapes)}")
    def _concat(
        rng: np.random.Generator,
        shapes: tuple[tuple[int, ...], ...] = _shapes,
    ) -> tuple[Objective, list[Tensor]]:
        parts = [_leaf(rng, f"x{index}", shape) for index, shape in enumerate(shapes)]
        axis = min(1, len(shapes[0]) - 1)
        weigh = _weighted(ops.concat(parts, axis=axis), rng)
        return lambda: weigh(ops.concat(parts, axis=axis)), parts


GRADCHECK_STD = 0.1
"""Init scale of the checked networks, keeps every gradient well above noise."""


def _store(rng: np.random.Generator) -> tuple[ParameterStore, Initializer]:
    store = ParameterStore()
    return store, Initializer(store, rng, GRADCHECK_STD)


@register("encoder", "encode[32x32]")
def _encoder(rng: np.random.Generator) -> tuple[Objective, list[Tensor]]:
    cfg = EncoderConfig(in_channels=3)
    store, init = _store(rng)
    init_encoder(init, store.scope("enc"), cfg)
    image = Tensor(rng.uniform(size=(1, 3, 32, 32)))
    pyramid = encode(image, cfg, store.scope("enc"))
    weighs = [_weighted(feature, rng) for feature in pyramid.features]

    def objective() -> Tensor:
        features = encode(image, cfg, store.scope("enc")).features
        terms = [
            weigh(feature) for weigh, feature in zip(weighs, features, strict=True)
        ]
        return sum(terms[1:], terms[0])

    return objective, [param.tensor for param in store]


def _fusion_case(stage: int, channels: int, extent: int) -> None:
    @register("fusion", f"fusion_block[stage{stage}]")
    def build(rng: np.random.Generator) -> tuple[Objective, list[Tensor]]:
        cfg = FusionConfig()
        bins = stage_pool_bins(cfg, extent, extent)
        store, init = _store(rng)
        init_fusion(init, store.scope("fusion"), cfg, channels, 2, bins)
        feats = [
            _leaf(rng, f"feat{index}", (1, channels, extent, extent))
            for index in range(2)
        ]

        def forward() -> Tensor:
            return fusion_block(feats, store.scope("fusion"), cfg, bins).tensor

        weigh = _weighted(forward(), rng)
        return lambda: weigh(forward()), [*feats, *(param.tensor for param in store)]


for _stage, (_channels, _extent) in enumerate(((16, 16), (32, 8), (64, 4), (128, 2))):
    _fusion_case(_stage + 1, _channels, _extent)


@register("head", "decode[32x32]")
def _head(rng: np.random.Generator) -> tuple[Objective, list[Tensor]]:
    cfg = HeadConfig()
    channels = EncoderConfig().stage_channels
    store, init = _store(rng)
    init_head(init, store.scope("head"), cfg, channels)
    stages = [
        _leaf(rng, f"stage{index + 1}", (1, width, 8 >> index, 8 >> index))
        for index, width in enumerate(channels)
    ]

    def forward() -> Tensor:
        return decode(stages, store.scope("head"), cfg, (32, 32))

    weigh = _weighted(forward(), rng)
    return lambda: weigh(forward()), [*stages, *(param.tensor for param in store)]


@register("model", "u3m[M=2,32x32]")
def _model(rng: np.random.Generator) -> tuple[Objective, list[Tensor]]:
    config = ModelConfig(
        modalities=2,
        in_channels=(3, 1),
        init_std=GRADCHECK_STD,
        data=DataConfig(height=32, width=32),
    )
    model = U3M(config, seed=int(rng.integers(2**31)))
    images = [
        Tensor(rng.uniform(size=(1, channels, 32, 32)))
        for channels in config.in_channels
    ]
    labels = rng.integers(0, config.num_classes, size=(1, 32, 32))

    def objective() -> Tensor:
        return ops.softmax_cross_entropy(model(images), labels, U3M_IGNORE_INDEX)

    return objective, [param.tensor for param in model.params]
