import math

import numpy as np
import pytest

from app.flows.convexity1d import along_geodesic_k
from app.flows.dynconv import (
    FORMS,
    Potential,
    build_min_geodesic,
    check_dynamic_convexity,
    check_dynamic_N_convexity,
    check_evi,
    check_weak_difference,
    reparametrize_K,
    static_rescaled,
)
from app.flows.spaces import cycle_space, interval_space, points_space, unit_cycle
from app.flows.tgs import DiscreteGeodesic, TimeGrid, enumerate_geodesics
from app.flows.transport import TdMmSpace


@pytest.fixture
def line(grid):
    """Static 9-point interval [-1, 1], h = 1/4."""
    return interval_space(9, grid, -1.0, 1.0)


# ------------ Strong dynamic convexity ------------


@pytest.mark.parametrize("form", FORMS)
def test_convex_potential_on_static_space_passes_every_form(line, form):
    V = Potential.quadratic(line, 1.0)
    report = check_dynamic_convexity(line, V, 0.2, form)
    assert report.holds and report.status == "pass"
    assert report.min_slack >= -report.tolerance


def test_concave_potential_fails_through_the_origin(line):
    V = Potential.quadratic(line, -2.0)
    report = check_dynamic_convexity(line, V, 0.2, "slope")
    assert not report.holds
    assert report.status == "fail"
    assert 4 in report.witness.points
    assert sorted(report.witness.endpoints) == [0, 8]


def test_rescaled_static_metric_keeps_k_convex_potential_convex(grid):
    base = interval_space(9, grid, -1.0, 1.0)
    space = static_rescaled(base, 1.0)
    V = Potential.quadratic(space, 1.0)
    h = 0.25
    report = check_dynamic_convexity(space, V, 0.2, "slope", tol=5 * h)
    assert report.holds


@pytest.mark.parametrize("K", [-1.0, 0.0, 1.0])
def test_static_k_convexity_matches_dynamic_convexity_of_rescaled_circle(K):
    grid = TimeGrid.uniform(0.0, 0.2, 2)
    circle = cycle_space(32, grid)
    h = 2 * math.pi / 32
    tdmm = TdMmSpace.unweighted(circle)
    V = Potential.entropy_delegate(tdmm)

    pairs = [(0, 16), (0, 8), (3, 10)]
    static_ok = True
    for x, y in pairs:
        gamma = DiscreteGeodesic.from_path(circle, circle.oracle(0.0).canonical_path(x, y), 0.0)
        static_ok &= along_geodesic_k(V.along(gamma), gamma.params, K, gamma.length ** 2, tol=5 * h).holds

    dynamic = check_dynamic_convexity(static_rescaled(circle, K), Potential.entropy_delegate(tdmm), 0.2, "slope",
                                      tol=5 * h, pairs=pairs)
    assert static_ok == dynamic.holds
    assert dynamic.holds == (K <= 0)


def test_unknown_form_and_first_time_are_rejected(line):
    V = Potential.quadratic(line, 1.0)
    with pytest.raises(ValueError, match="unknown form"):
        check_dynamic_convexity(line, V, 0.2, "sideways")
    with pytest.raises(ValueError, match="no left difference"):
        check_dynamic_convexity(line, V, 0.0)


# ------------ N-forms ------------


def test_infinite_N_reproduces_plain_verdict(line):
    V = Potential.quadratic(line, 1.0)
    a = check_dynamic_N_convexity(line, V, 0.2, math.inf, "slope")
    b = check_dynamic_convexity(line, V, 0.2, "slope")
    assert a.min_slack == b.min_slack and a.holds == b.holds


def test_constant_entropy_on_flat_circle_is_N_convex():
    circle = cycle_space(32, TimeGrid.uniform(0.0, 0.2, 2))
    V = Potential.entropy_delegate(TdMmSpace.unweighted(circle))
    for form in ("slope", "strain", "moderate"):
        report = check_dynamic_N_convexity(circle, V, 0.2, 2.0, form, pairs=[(0, 16), (2, 9)])
        assert report.holds
        assert report.min_slack == pytest.approx(0.0, abs=1e-12)


def test_N_slope_slack_matches_direct_evaluation(line):
    V = Potential.quadratic(line, 1.0)
    N = 2.0
    report = check_dynamic_N_convexity(line, V, 0.2, N, "slope", pairs=[(4, 8)])
    x = np.linspace(0.0, 1.0, 5)
    v = 0.5 * x ** 2
    p = 0.25
    expected = (v[-1] - v[-2]) / p - (v[1] - v[0]) / p - (v[0] - v[-1]) ** 2 / N
    assert report.min_slack == pytest.approx(expected)
    assert report.holds


def test_N_below_one_is_rejected(line):
    with pytest.raises(ValueError):
        check_dynamic_N_convexity(line, Potential.quadratic(line, 1.0), 0.2, 0.5)


def test_weak_difference_is_sharp_for_quadratics(line):
    V = Potential.quadratic(line, 1.0)
    assert check_weak_difference(line, V, 0.2, 1.0).holds
    report = check_weak_difference(line, V, 0.2, 1.5)
    assert not report.holds and report.status == "fail"


# ------------ Midpoint geodesics ------------


def test_unique_geodesic_ignores_the_potential(line):
    V = Potential.tabulated(line, [[5, 4, 3, 2, 1, 2, 3, 4, 5]])
    gamma = build_min_geodesic(line, V, 0.0, 0, 8, depth=3)
    assert gamma.points == list(range(9))


def test_antipodal_midpoints_follow_the_low_arc():
    cyc = unit_cycle(8, TimeGrid.uniform(0.0, 1.0, 1))
    V = Potential.tabulated(cyc, [[0, 0, 0, 0, 0, -1, -1, -1]])
    gamma = build_min_geodesic(cyc, V, 0.0, 0, 4, depth=2)
    assert gamma.points == [0, 7, 6, 5, 4]
    assert gamma.is_constant_speed()


def test_depth_one_on_four_cycle_and_coarse_mesh():
    cyc = unit_cycle(4, TimeGrid.uniform(0.0, 1.0, 1))
    V = Potential.tabulated(cyc, [[0, 2, 0, 1]])
    assert build_min_geodesic(cyc, V, 0.0, 0, 2, depth=1).points == [0, 3, 2]
    with pytest.raises(ValueError, match="mesh too coarse"):
        build_min_geodesic(cyc, V, 0.0, 0, 1, depth=1)


# ------------ EVI ------------


def test_stationary_point_at_the_minimizer(line):
    V = Potential.quadratic(line, 1.0)
    report = check_evi(line, V, [4, 4, 4])
    assert report.holds
    xs = np.linspace(-1.0, 1.0, 9)
    for s in report.slacks:
        assert s.slack == pytest.approx(0.5 * xs[s.z] ** 2)


def flow_space(sign):
    grid = TimeGrid.uniform(0.0, 0.4, 4)
    traj_x = [math.exp(sign * (t - 0.4)) for t in grid.times]
    zs = [-1.0, -0.5, 0.0, 2.0]
    space = points_space(sorted(set(traj_x + zs)), grid)
    xs = space.coords[:, 0].tolist()
    return space, [xs.index(x) for x in traj_x], [xs.index(z) for z in zs]


def test_evi_along_the_upward_gradient_flow():
    space, traj, zs = flow_space(+1.0)
    V = Potential.quadratic(space, 1.0)
    report = check_evi(space, V, traj, zs, tol=0.1)
    assert report.holds
    xs = space.coords[:, 0]
    for s in report.slacks:
        x = xs[traj[space.time_grid.index_of(s.t)]]
        assert s.slack == pytest.approx(0.5 * (x - xs[s.z]) ** 2, abs=0.2)


def test_evi_fails_against_the_gradient():
    space, traj, zs = flow_space(-1.0)
    report = check_evi(space, Potential.quadratic(space, 1.0), traj, zs, tol=0.1)
    assert not report.holds
    assert report.witness.slack < -0.1


def test_evi_needs_one_point_per_time(line):
    with pytest.raises(ValueError):
        check_evi(line, Potential.quadratic(line, 1.0), [4, 4])


# ------------ Reparametrization ------------


def test_reparametrization_scales_and_preserves_geodesics():
    grid = TimeGrid.uniform(0.0, 1.0, 2)
    circle = cycle_space(8, grid)
    assert np.allclose(reparametrize_K(circle, 0.0).lengths, circle.lengths)
    tilde = reparametrize_K(circle, 0.25)
    np.testing.assert_allclose(tilde.distance(1.0) ** 2, 0.5 * circle.distance(1.0) ** 2, rtol=1e-12)
    for t in grid.times:
        a = sorted(g.points for g in enumerate_geodesics(circle, t, 0, 4)[0])
        b = sorted(g.points for g in enumerate_geodesics(tilde, t, 0, 4)[0])
        assert a == b
    with pytest.raises(ValueError):
        reparametrize_K(circle, 0.6)
