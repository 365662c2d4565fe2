import logging
import math

import numpy as np
import pytest

from app.flows.spaces import complete_space, cycle_space
from app.flows.tgs import TimeGrid
from app.flows.transport import (
    Coupling,
    MeasurePath,
    ProbabilityVector,
    TdMmSpace,
    displacement_interpolation,
    entropy,
    entropy_decomposition,
    interpolate_geodesic,
    measure_path_functionals,
    selection_count,
    wasserstein,
    wasserstein_bound_transfer,
)

pm = ProbabilityVector.point_mass


def two_points(grid=None):
    grid = grid or TimeGrid.uniform(0.0, 1.0, 1)
    return complete_space(np.array([[0.0, 1.0], [1.0, 0.0]]), grid)


# ------------ Measures ------------


def test_probability_vector_validation():
    with pytest.raises(ValueError):
        ProbabilityVector(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ProbabilityVector(np.array([1.5, -0.5]))
    mu = ProbabilityVector.from_mapping({0: 1.0, 3: 3.0}, 4)
    assert mu.weights.tolist() == [0.25, 0.0, 0.0, 0.75]
    assert mu.support == [0, 3]


def test_coupling_checks_marginals():
    mu, nu = ProbabilityVector.uniform(2), pm(0, 2)
    with pytest.raises(ValueError):
        Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]), mu, nu)


# ------------ Wasserstein ------------


def test_identical_measures_have_zero_distance(circle):
    mu = ProbabilityVector.uniform(16, [0, 1, 5])
    W, cpl = wasserstein(circle, 0.0, mu, mu)
    assert W == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(cpl.matrix, np.diag(mu.weights), atol=1e-14)


def test_point_masses_recover_the_metric(circle):
    W, _ = wasserstein(circle, 0.1, pm(0, 16), pm(5, 16))
    assert W == pytest.approx(circle.distance(0.1)[0, 5])


def test_two_point_space_unique_coupling():
    W, _ = wasserstein(two_points(), 0.0, pm(0, 2), ProbabilityVector.uniform(2))
    assert W ** 2 == pytest.approx(0.5)
    assert W == pytest.approx(0.7071, abs=1e-4)


def test_exact_mode_agrees(circle):
    mu = ProbabilityVector.from_mapping({0: 1, 1: 2}, 16)
    nu = ProbabilityVector.from_mapping({4: 1, 9: 2}, 16)
    assert wasserstein(circle, 0.0, mu, nu, exact=True)[0] == pytest.approx(wasserstein(circle, 0.0, mu, nu)[0], rel=1e-9)


# ------------ Interpolation ------------


def test_interpolation_endpoints_and_midpoint(circle):
    _, cpl = wasserstein(circle, 0.0, pm(0, 16), pm(4, 16))
    assert displacement_interpolation(circle, 0.0, cpl, 0.0) is cpl.mu
    mid = displacement_interpolation(circle, 0.0, cpl, 0.5)
    assert mid.support == [2]


def test_midpoint_property(circle):
    mu = ProbabilityVector.uniform(16, [0, 1])
    nu = ProbabilityVector.uniform(16, [6, 7])
    path = interpolate_geodesic(circle, 0.0, mu, nu, [0.0, 0.5, 1.0])
    W = wasserstein(circle, 0.0, mu, nu)[0]
    W_half = wasserstein(circle, 0.0, mu, path.measures[1])[0]
    h = 2 * math.pi / 16
    assert abs(W_half - 0.5 * W) <= h


def test_alternative_selection_on_antipodal_pair(circle):
    _, cpl = wasserstein(circle, 0.0, pm(0, 16), pm(8, 16))
    count, truncated = selection_count(circle, 0.0, cpl)
    assert count == 2 and not truncated
    first = displacement_interpolation(circle, 0.0, cpl, 0.5, selection=0)
    second = displacement_interpolation(circle, 0.0, cpl, 0.5, selection=1)
    assert first.support != second.support


# ------------ Entropy ------------


def test_point_mass_entropy_on_four_points():
    tdmm = TdMmSpace.unweighted(complete_space(np.ones((4, 4)) - np.eye(4), TimeGrid.uniform(0.0, 1.0, 1)))
    assert entropy(pm(2, 4), tdmm, 0.0) == pytest.approx(math.log(4.0))


def test_entropy_of_normalized_reference_with_constant_weight():
    space = two_points()
    tdmm = TdMmSpace(space, ProbabilityVector.uniform(2), np.full((2, 2), 0.3))
    mt = tdmm.m_t(0.0)
    mu = ProbabilityVector.normalized(mt)
    assert entropy(mu, tdmm, 0.0) == pytest.approx(-math.log(mt.sum()))


def test_weighted_entropy_matches_decomposition():
    space = two_points()
    f = np.array([[0.0, 1.0], [0.0, 1.0]])          # f_t(x) = x
    tdmm = TdMmSpace(space, ProbabilityVector.uniform(2), f)
    mu = ProbabilityVector.uniform(2)
    ent, pot = entropy_decomposition(mu, tdmm, 0.0)
    assert ent == pytest.approx(0.0, abs=1e-15)
    assert pot == pytest.approx(0.5)
    assert entropy(mu, tdmm, 0.0) == pytest.approx(ent + pot)


def test_entropy_is_infinite_off_the_reference_support():
    space = two_points()
    tdmm = TdMmSpace.unweighted(space, pm(0, 2))
    assert entropy(pm(1, 2), tdmm, 0.0) == math.inf


def test_declared_weight_bound_is_enforced():
    with pytest.raises(ValueError, match="exceeds the declared bound"):
        TdMmSpace(two_points(), ProbabilityVector.uniform(2), np.full((2, 2), 2.0), f_bound=1.0)


def test_normalized_reference_rescales_m_t_by_a_constant():
    space = two_points(TimeGrid.uniform(0.0, 1.0, 2))
    f = np.array([[0.0, 1.0], [0.5, 0.2], [1.0, -1.0]])
    tdmm = TdMmSpace(space, ProbabilityVector.uniform(2), f)
    norm = tdmm.normalized_at(0.5)
    np.testing.assert_allclose(norm.f_at(0.5), 0.0, atol=1e-15)
    ratios = [norm.m_t(t) / tdmm.m_t(t) for t in (0.0, 0.5, 1.0)]
    np.testing.assert_allclose(np.ravel(ratios), ratios[0][0], rtol=1e-12)


def test_off_grid_reference_time_is_logged(caplog):
    space = two_points(TimeGrid.uniform(0.0, 1.0, 2))
    tdmm = TdMmSpace(space, ProbabilityVector.uniform(2), np.array([[0.0, 1.0], [0.5, 0.2], [1.0, -1.0]]), name="pair")
    with caplog.at_level(logging.DEBUG, logger="app.flows.transport"):
        tdmm.normalized_at(0.25)
    assert "off the grid" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.DEBUG, logger="app.flows.transport"):
        tdmm.normalized_at(0.5)
    assert "off the grid" not in caplog.text


# ------------ Path functionals ------------


def test_constant_path_has_zero_action_and_strain(shrinking_circle):
    mu = ProbabilityVector.uniform(16, [3, 4])
    path = MeasurePath(np.array([0.0, 0.5, 1.0]), [mu, mu, mu], 0.1)
    assert measure_path_functionals(shrinking_circle, path) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_geodesic_action_and_exponential_strain():
    kappa = 1.0
    grid = TimeGrid.uniform(0.0, 0.2, 2)
    space = cycle_space(16, grid, scale=lambda t: math.exp(kappa * t))
    t, h = 0.2, 0.1
    path = interpolate_geodesic(space, t, pm(0, 16), pm(4, 16), np.linspace(0.0, 1.0, 5))
    act, stn = measure_path_functionals(space, path)
    W2 = wasserstein(space, t, pm(0, 16), pm(4, 16))[0] ** 2
    assert act == pytest.approx(W2, rel=1e-9)
    assert stn == pytest.approx((1.0 - math.exp(-2 * kappa * h)) / h * act, rel=1e-9)


def test_bound_transfer_on_expanding_circle():
    grid = TimeGrid.uniform(0.0, 0.2, 2)
    space = cycle_space(16, grid, scale=lambda t: math.exp(t))
    res = wasserstein_bound_transfer(space, 0.0, 0.2, ProbabilityVector.uniform(16, [0, 1]), pm(7, 16))
    assert res.c2 == pytest.approx(math.exp(0.4))
    assert res.holds
    assert res.lhs == pytest.approx(res.rhs, rel=1e-9)
