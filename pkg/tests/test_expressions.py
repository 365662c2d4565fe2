# tests/test_expressions.py
import math

import numpy as np
import pytest

from app.errors import ScenarioError
from app.flows.expressions import (
    compile_matrix,
    compile_scalar,
    compile_time_function,
    coordinate_symbols,
    parse_expression,
)
from app.flows.model_metrics import flat, get_model


def test_scalar_partials_are_exact():
    f = compile_scalar("x*y + t*x^2", 2)
    p = np.array([2.0, 3.0])
    assert f(1.0, p) == pytest.approx(10.0)
    np.testing.assert_allclose(f.grad(1.0, p), [7.0, 2.0])
    np.testing.assert_allclose(f.hess(1.0, p), [[2.0, 1.0], [1.0, 0.0]])
    assert f.dt(1.0, p) == pytest.approx(4.0)


def test_functions_and_constants():
    f = compile_scalar("exp(x) + sqrt(4) * cos(pi) + abs(-3)", 1)
    assert f(0.0, [0.0]) == pytest.approx(1.0 - 2.0 + 3.0)


@pytest.mark.parametrize("text", ["y + 1", "x +", "foo(x)", "x == 1"])
def test_bad_expressions_raise_scenario_error(text):
    with pytest.raises(ScenarioError):
        parse_expression(text, dim=1)


def test_time_can_be_excluded():
    with pytest.raises(ScenarioError, match="unknown symbol"):
        parse_expression("x + t", dim=1, allow_time=False)


def test_coordinate_dimension_bounds():
    assert [str(s) for s in coordinate_symbols(3)] == ["x", "y", "z"]
    with pytest.raises(ValueError):
        coordinate_symbols(4)


def test_matrix_fields():
    g = compile_matrix([["exp(2*t)", "x"], ["x", "1"]], 2)
    np.testing.assert_allclose(g(0.0, [0.5, 0.0]), [[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(g.dt(0.0, [0.5, 0.0]), [[2.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ScenarioError, match="symmetric"):
        compile_matrix([["1", "x"], ["0", "1"]], 2)
    with pytest.raises(ScenarioError):
        compile_matrix([["1", "0"]], 2)


def test_time_function():
    c, dc = compile_time_function("sqrt(1 - 2*t)")
    assert c(0.32) == pytest.approx(0.6)
    assert dc(0.32) == pytest.approx(-1.0 / 0.6)
    with pytest.raises(ScenarioError):
        compile_time_function("x + t")


# ------------ model metrics ------------


def test_sphere_closed_forms():
    S = get_model("sphere")
    pole_side = np.array([0.5, 0.0])
    equator = np.array([math.pi / 2, 0.0])
    assert S.distance(pole_side, equator) == pytest.approx(math.pi / 2 - 0.5)
    mid = S.geodesic(np.array([math.pi / 2, -0.4]), np.array([math.pi / 2, 0.4]), 0.5)
    np.testing.assert_allclose(mid, [math.pi / 2, 0.0], atol=1e-12)
    np.testing.assert_allclose(S.ricci(equator), S.metric(equator))


def test_hyperbolic_closed_forms():
    H = get_model("hyperbolic")
    assert H.distance(np.array([0.0, 1.0]), np.array([0.0, math.e])) == pytest.approx(1.0)
    np.testing.assert_allclose(H.ricci(np.array([0.0, 2.0])), -np.eye(2) / 4.0)
    assert H.geodesic is None


def test_flat_and_registry():
    F = flat(3)
    assert F.distance([0, 0, 0], [1, 2, 2]) == pytest.approx(3.0)
    assert get_model("flat", 1).dim == 1
    with pytest.raises(ValueError):
        flat(4)
    with pytest.raises(ValueError, match="unknown model"):
        get_model("torus")
