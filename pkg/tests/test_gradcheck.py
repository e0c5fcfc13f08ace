# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Finite-difference gradient check tests."""

from collections import Counter

import numpy as np
import pytest

from u3m import ops
from u3m.config import U3M_GRADCHECK_COORDS, U3M_GRADCHECK_TOLERANCE
from u3m.errors import ConfigError, EvaluationError
from u3m.gradcheck import MODULES, SUITE, check_gradients, grad_check, run_suite
from u3m.tensor import Array, Tensor


def test_every_module_has_cases() -> None:
    """Each documented module registers at least one case."""
    assert set(SUITE) == set(MODULES)
    assert all(SUITE[module] for module in MODULES)


def test_every_op_is_checked_on_three_shapes() -> None:
    """Each registered op appears with at least three shapes."""
    kinds = Counter(case.name.split("[", 1)[0] for case in SUITE["ops"])
    assert {"neg", "concat", "matmul", "conv2d"} <= set(kinds)
    assert min(kinds.values()) >= 3  # noqa: PLR2004


def test_networks_use_the_full_coordinate_budget() -> None:
    """Network cases sample as many coordinates per tensor as the ops."""
    for module in ("encoder", "fusion", "head", "model"):
        assert all(case.coords == U3M_GRADCHECK_COORDS for case in SUITE[module])


def test_op_suite_passes() -> None:
    """Analytic op gradients match central differences."""
    results = run_suite("ops")
    failed = [result.case.name for result in results if not result.passed]
    assert not failed


@pytest.mark.slow()
@pytest.mark.parametrize("module", ["encoder", "fusion", "head", "model"])
def test_suite_passes_on_networks(module: str) -> None:
    """Network gradients match central differences."""
    for result in run_suite(module):
        assert result.report.max_rel_err < U3M_GRADCHECK_TOLERANCE, result.case.name


def test_wrong_gradient_is_detected(rng: np.random.Generator) -> None:
    """A doubled gradient shows up as a large relative error."""
    x = Tensor(rng.normal(size=5), requires_grad=True, name="x")

    def square_with_bad_grad(value: Tensor) -> Tensor:
        def vjp(grad: Array, _: tuple[bool, ...]) -> tuple[Array]:
            return (4.0 * grad * value.data,)

        return ops.apply("bad_square", (value,), value.data**2, vjp)

    error = grad_check(lambda: ops.sum(square_with_bad_grad(x)), [x])
    assert error > 0.3  # noqa: PLR2004


def test_softmax_gradient_of_sum_is_zero(rng: np.random.Generator) -> None:
    """Softmax rows always sum to one, so the gradient vanishes."""
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="x")
    report = check_gradients(lambda: ops.sum(ops.softmax(x)), [x])
    assert report.max_abs_err < 1e-8  # noqa: PLR2004


def test_perturbation_is_restored(rng: np.random.Generator) -> None:
    """Parameters hold their original values afterwards."""
    values = rng.normal(size=(4, 4))
    x = Tensor(values, requires_grad=True, name="x")
    grad_check(lambda: ops.sum(ops.exp(x)), [x], coords=16)
    np.testing.assert_array_equal(x.data, values)


def test_step_and_objective_are_validated() -> None:
    """Bad steps and non-finite objectives are reported."""
    x = Tensor([1.0], requires_grad=True, name="x")
    with pytest.raises(ConfigError):
        grad_check(lambda: ops.sum(x), [x], eps=1e-2)
    with pytest.raises(EvaluationError):
        grad_check(lambda: ops.sum(ops.exp(x * 1000.0)), [x])


def test_unknown_module() -> None:
    """Only documented modules can be selected."""
    with pytest.raises(ConfigError):
        run_suite("decoder")
