import itertools
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linprog

from app.errors import NumericalFailure
from app.flows.ddi import coupling_vertices
from app.flows.network_simplex import solve_transport


def lp_reference(a, b, C):
    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun


def small_measures(n, denominator=6):
    """All probability vectors on n points with weights k / denominator."""
    for ks in itertools.product(range(denominator + 1), repeat=n):
        if sum(ks) == denominator:
            yield np.array(ks, dtype=float) / denominator


def test_identical_marginals_on_zero_diagonal_cost():
    a = np.array([0.2, 0.3, 0.5])
    C = 1.0 - np.eye(3)
    sol = solve_transport(a, a, C)
    assert sol.cost == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(sol.flow, np.diag(a), atol=1e-14)


def test_plan_is_a_basic_coupling(rng):
    a = rng.dirichlet(np.ones(5))
    b = rng.dirichlet(np.ones(4))
    C = rng.random((5, 4))
    sol = solve_transport(a, b, C)
    np.testing.assert_allclose(sol.flow.sum(axis=1), a, atol=1e-12)
    np.testing.assert_allclose(sol.flow.sum(axis=0), b, atol=1e-12)
    assert len(sol.basis) == 5 + 4 - 1
    assert sol.cost == pytest.approx(lp_reference(a, b, C), abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_matches_extreme_coupling_enumeration(n, rng):
    C = rng.random((n, n)) * 4.0
    C = C + C.T
    np.fill_diagonal(C, 0.0)
    measures = list(small_measures(n))[::3]
    for a in measures:
        for b in measures:
            brute = min(float(np.sum(P * C)) for P in coupling_vertices(a, b))
            assert solve_transport(a, b, C).cost == pytest.approx(brute, abs=1e-9)


def test_exact_mode_returns_fractions():
    a = [Fraction(1, 3), Fraction(2, 3)]
    b = [Fraction(1, 2), Fraction(1, 2)]
    C = [[Fraction(0), Fraction(1)], [Fraction(1), Fraction(0)]]
    sol = solve_transport(a, b, C, exact=True)
    assert sol.exact_cost == Fraction(1, 6)
    assert sol.cost == pytest.approx(1 / 6)


def test_degenerate_permutation_problem(rng):
    n = 6
    a = np.full(n, 1.0 / n)
    C = rng.random((n, n))
    sol = solve_transport(a, a, C)
    assert sol.cost == pytest.approx(lp_reference(a, a, C), abs=1e-10)


def test_rejects_unbalanced_marginals():
    with pytest.raises(ValueError, match="marginal sums differ"):
        solve_transport([0.5, 0.5], [0.6, 0.6], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        solve_transport([1.5, -0.5], [0.5, 0.5], np.zeros((2, 2)))


def test_pivot_cap_raises_numerical_failure():
    a = np.full(5, 0.2)
    C = 10.0 * np.eye(5)
    with pytest.raises(NumericalFailure):
        solve_transport(a, a, C, max_pivots=1)
