import math

import numpy as np
import pytest

from app.flows.spaces import cycle_space, interval_space, load_edge_table, points_space, sphere_mesh, unit_cycle
from app.flows.tgs import (
    DiscreteCurve,
    DiscreteGeodesic,
    DiscreteGeodesicSpace,
    TimeGrid,
    action,
    enumerate_geodesics,
    estimate_controls,
    infinitesimal_action,
    left_difference_sq,
    strain,
)


def growing_cycle(rate, steps=4):
    grid = TimeGrid.uniform(0.0, 0.4, steps)
    return cycle_space(8, grid, scale=lambda t: math.exp(rate * t))


# ------------ Time grid ------------


def test_time_grid_neighbours():
    g = TimeGrid.uniform(0.0, 1.0, 4)
    assert g.M == 4
    assert g.left_neighbor(0.5) == pytest.approx(0.25)
    assert g.right_neighbor(0.5) == pytest.approx(0.75)
    assert g.interior() == pytest.approx([0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError, match="no left difference"):
        g.left_neighbor(0.0)
    with pytest.raises(ValueError, match="not a grid time"):
        g.index_of(0.3)


def test_time_grid_rejects_unordered_times():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.4]))


# ------------ Distances and geodesics ------------


def test_single_vertex_space_has_zero_distance():
    space = DiscreteGeodesicSpace(1, [], np.zeros((2, 0)), TimeGrid.uniform(0.0, 1.0, 1))
    assert space.distance(0.0).tolist() == [[0.0]]


def test_four_cycle_opposite_vertices():
    space = unit_cycle(4, TimeGrid.uniform(0.0, 1.0, 1))
    assert space.distance(0.0)[0, 2] == 2.0
    geos, truncated = enumerate_geodesics(space, 0.0, 0, 2)
    assert not truncated
    assert sorted(g.points for g in geos) == [[0, 1, 2], [0, 3, 2]]
    assert space.oracle(0.0).canonical_path(0, 2) == [0, 1, 2]


def test_exponential_lengths_scale_distances():
    space = growing_cycle(1.0)
    D0 = space.distance_at_index(0)
    for k, t in enumerate(space.times):
        np.testing.assert_allclose(space.distance_at_index(k), math.exp(t) * D0, rtol=1e-12)


def test_disconnected_graph_is_rejected():
    space = DiscreteGeodesicSpace(3, [(0, 1)], np.ones((2, 1)), TimeGrid.uniform(0.0, 1.0, 1))
    with pytest.raises(ValueError, match="disconnected graph"):
        space.distance(0.0)


def test_path_cap_truncates_enumeration():
    # 2x3 grid graph has 3 shortest corner-to-corner paths
    edges = [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]
    space = DiscreteGeodesicSpace(6, edges, np.ones((2, len(edges))), TimeGrid.uniform(0.0, 1.0, 1))
    paths, truncated = space.oracle(0.0, cap=2).paths(0, 5)
    assert truncated and len(paths) == 2
    paths, truncated = space.oracle(0.0, cap=5).paths(0, 5)
    assert not truncated and len(paths) == 3


def test_geodesic_is_constant_speed(circle):
    gamma = DiscreteGeodesic.from_path(circle, [0, 1, 2, 3, 4], 0.0)
    assert gamma.is_constant_speed()
    assert gamma.params == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    assert gamma.point_at(0.5) == 2


# ------------ Action and strain ------------


def test_action_of_constant_curve_is_zero(circle):
    curve = DiscreteCurve(np.array([0.0, 0.5, 1.0]), [3, 3, 3], 0.0, circle)
    assert action(curve) == 0.0


def test_action_of_geodesic_is_squared_length(circle):
    gamma = DiscreteGeodesic.from_path(circle, [0, 1, 2, 3, 4, 5], 0.0)
    L = circle.distance(0.0)[0, 5]
    assert action(gamma) == pytest.approx(L ** 2, rel=1e-12)
    assert infinitesimal_action(gamma) == pytest.approx(L ** 2, rel=1e-12)


def test_speed_jump_increases_action(circle):
    # one edge in the first half, three in the second
    curve = DiscreteCurve(np.array([0.0, 0.5, 1.0]), [0, 1, 4], 0.0, circle)
    L = circle.distance(0.0)[0, 4]
    assert action(curve) > L ** 2 + 1e-9
    assert infinitesimal_action(curve) >= action(curve) - 1e-12


def test_static_family_has_zero_strain(circle):
    gamma = DiscreteGeodesic.from_path(circle, [0, 1, 2, 3], 0.2)
    assert strain(circle, gamma) == pytest.approx(0.0, abs=1e-14)


def test_strain_of_exponential_family_matches_action():
    kappa = 1.5
    space = growing_cycle(kappa)
    t = float(space.times[2])
    h = t - float(space.times[1])
    gamma = DiscreteGeodesic.from_path(space, [0, 1, 2, 3], t)
    c = (1.0 - math.exp(-2.0 * kappa * h)) / h
    assert strain(space, gamma) == pytest.approx(c * action(gamma), rel=1e-9)
    assert c == pytest.approx(2 * kappa, rel=0.2)


def test_strain_refinement_is_monotone():
    space = growing_cycle(1.0)
    t = float(space.times[1])
    fine = DiscreteGeodesic.from_path(space, [0, 1, 2, 3, 4], t)
    coarse = DiscreteCurve(fine.params[[0, 2, 4]], [fine.points[i] for i in (0, 2, 4)], t, space)
    assert strain(space, fine) <= strain(space, coarse) + 1e-12


def test_left_difference_needs_a_previous_time(circle):
    with pytest.raises(ValueError, match="no left difference"):
        left_difference_sq(circle, 0.0)


# ------------ Controls ------------


def test_static_controls_vanish(circle):
    est = estimate_controls(circle)
    assert np.all(est.kappa == 0.0) and np.all(est.lam == 0.0)


def test_growth_and_decay_controls():
    up = estimate_controls(growing_cycle(1.0))
    assert up.kappa == pytest.approx(np.ones(4))
    assert np.all(up.lam == 0.0)
    down = estimate_controls(growing_cycle(-2.0))
    assert np.all(down.kappa == 0.0)
    assert down.lam == pytest.approx(2.0 * np.ones(4))
    assert down.lambda_at(0.2) == pytest.approx(2.0)
    assert down.integrated(0.0, 0.4)[1] == pytest.approx(0.8)


# ------------ Builders ------------


def test_builders_produce_connected_spaces(tmp_path):
    grid = TimeGrid.uniform(0.0, 1.0, 2)
    assert interval_space(5, grid).distance(0.0)[0, 4] == pytest.approx(2.0)
    assert points_space([0.0, 0.5, 2.0], grid).distance(1.0)[0, 2] == pytest.approx(2.0)
    sphere = sphere_mesh(3, 6, grid)
    assert sphere.distance(0.0)[0, sphere.n_vertices - 1] == pytest.approx(math.pi, rel=1e-9)

    table = tmp_path / "edges.csv"
    table.write_text("t,u,v,length\n0,0,1,1.0\n0,1,2,1.0\n1,0,1,2.0\n1,1,2,2.0\n")
    loaded = load_edge_table(table)
    assert loaded.n_vertices == 3
    assert loaded.distance(1.0)[0, 2] == pytest.approx(4.0)


def test_reverse_time_mirrors_lengths():
    space = growing_cycle(1.0)
    rev = space.reverse_time()
    np.testing.assert_allclose(rev.distance_at_index(0), space.distance_at_index(space.time_grid.M))
