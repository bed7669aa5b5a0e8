"""The finite-difference harness itself: coverage, sensitivity and the suite."""

import numpy as np
import pytest

from aila import autodiff as ad
from aila.autodiff import Tensor
from aila.gradcheck import (COMPOSITE_TOL, PRIMITIVE_TOL, check, model_cases, numerical_grad,
                            primitive_cases, relative_error, run_suite)

DIFFERENTIABLE_OPS = ["add", "sub", "mul", "scale", "relu", "sigmoid", "tanh", "exp", "log", "matmul",
                      "sum", "mean", "softmax", "layer_norm", "concat", "stack", "slice", "take",
                      "reshape", "broadcast_to", "embedding", "lstm_cell_step"]


def test_every_op_has_a_case():
    names = set(primitive_cases(np.random.default_rng(0)))
    for op in DIFFERENTIABLE_OPS:
        assert any(n == op or n.startswith(op + "_") for n in names), op


def test_numerical_grad_of_cubic():
    x = Tensor(np.array([0.5, -1.0, 2.0]))
    g = numerical_grad(lambda: ad.sum(ad.mul(ad.mul(x, x), x)), x)
    np.testing.assert_allclose(g, 3 * x.data ** 2, rtol=1e-9)


def test_relative_error_conventions():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(np.sqrt(2))
    assert relative_error(np.array([2.0]), np.array([2.0 * (1 + 1e-7)])) < 1e-6


def test_wrong_backward_is_caught():
    x = Tensor(np.array([0.3, -0.7, 1.1]))

    def bad_square(t):
        # forward t^2 but backward claims derivative t
        return ad._make("bad_square", t.data ** 2, (t,), lambda g: (g * t.data,))

    assert check(lambda: ad.sum(bad_square(x)), [x]) > 0.3


def test_small_suite_passes():
    results = run_suite("small")
    by_name = {r.name: r for r in results}
    assert all(r.passed for r in results), [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert by_name["matmul"].tolerance == PRIMITIVE_TOL
    assert by_name["model_aila2_H2"].tolerance == COMPOSITE_TOL


def test_model_cases_cover_all_parameters():
    cases = model_cases()
    assert set(cases) == {"aila1_H1", "aila1_H2", "aila2_H1", "aila2_H2"}
    _, params = cases["aila2_H2"]
    assert len(params) == len({id(p) for p in params}) > 10
