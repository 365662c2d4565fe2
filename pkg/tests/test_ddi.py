# tests/test_ddi.py
import math

import numpy as np
import pytest
from scipy.sparse.csgraph import shortest_path

from app.flows.ddi import (
    MmInstance,
    check_slice_bound,
    coupling_vertices,
    ddi_distance,
    feasible_metric_coupling,
    is_metric,
    is_metric_coupling,
    modulus_of_continuity,
    optimal_metric_coupling,
    static_transport_distance,
    vertex_oracle,
)
from app.flows.tgs import TimeGrid
from app.flows.transport import ProbabilityVector


@pytest.fixture
def unit_grid():
    return TimeGrid.uniform(0.0, 1.0, 4)


def two_point_d(delta):
    return np.array([[0.0, delta], [delta, 0.0]])


def line_d(n):
    x = np.arange(n, dtype=float)
    return np.abs(x[:, None] - x[None, :])


def two_point(delta, grid, f=None, name="two-point"):
    return MmInstance.static(two_point_d(delta), ProbabilityVector.uniform(2), grid, f, name=name)


def one_point(grid, f=None):
    return MmInstance.static(np.zeros((1, 1)), ProbabilityVector.uniform(1), grid, f, name="one-point")


# ------------ instances and metric couplings ------------


def test_instance_validation(unit_grid):
    bad = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
    assert not is_metric(bad)
    with pytest.raises(ValueError, match="not a metric"):
        MmInstance.static(bad, ProbabilityVector.uniform(3), unit_grid)
    with pytest.raises(ValueError, match="shape"):
        MmInstance(unit_grid, np.zeros((2, 1, 1)), ProbabilityVector.uniform(1), np.zeros((5, 1)))


def test_instance_from_tdmm(circle_tdmm):
    inst = MmInstance.from_tdmm(circle_tdmm)
    assert inst.D.shape == (3, 16, 16)
    np.testing.assert_allclose(inst.m.weights, 1.0 / 16)
    np.testing.assert_allclose(inst.f, 0.0)


def test_gluing_gives_metric_coupling():
    d, dt = line_d(3), two_point_d(1.5)
    mc = feasible_metric_coupling(d, dt, [(1, 0, 0.2)])
    assert is_metric_coupling(d, dt, mc.h)
    assert mc.h[1, 0] == pytest.approx(0.2)
    U = mc.union(d, dt)
    assert U.shape == (5, 5) and is_metric(U)
    with pytest.raises(ValueError):
        feasible_metric_coupling(d, dt, [(0, 0, -1.0)])


def test_optimal_metric_coupling_two_points():
    # diagonal coupling of {0, 1} with {0, 1.5}: h on the diagonal is |1.5 - 1| / 2
    weights = 0.5 * np.eye(2)
    mc, value = optimal_metric_coupling(two_point_d(1.0), two_point_d(1.5), weights)
    assert value == pytest.approx(0.0625, abs=1e-7)
    assert is_metric_coupling(two_point_d(1.0), two_point_d(1.5), mc.h, tol=1e-7)


def test_coupling_vertices():
    verts = coupling_vertices([0.5, 0.5], [0.5, 0.5])
    assert len(verts) == 2
    for P in verts:
        assert np.count_nonzero(P) == 2
    three = coupling_vertices(np.full(3, 1 / 3), np.full(3, 1 / 3))
    assert len(three) == 6


# ------------ D_I values ------------


def test_one_point_spaces_differ_by_weight(unit_grid):
    A, B = one_point(unit_grid, [0.3]), one_point(unit_grid, [1.0])
    r = ddi_distance(A, B)
    assert r.value == pytest.approx(0.7)
    assert r.quadratic_term == pytest.approx(0.0)
    assert vertex_oracle(A, B).value == pytest.approx(0.7)


def test_time_dependent_weight_gap(unit_grid):
    f = np.array([[t] for t in unit_grid.times])
    A = MmInstance(unit_grid, np.zeros((5, 1, 1)), ProbabilityVector.uniform(1), f)
    B = one_point(unit_grid)
    assert vertex_oracle(A, B).weight_term == pytest.approx(0.5)


def test_two_point_against_one_point(unit_grid):
    r = vertex_oracle(two_point(1.2, unit_grid), one_point(unit_grid))
    assert r.value == pytest.approx(0.6, abs=1e-6)


def test_two_point_pair(unit_grid):
    A, B = two_point(1.0, unit_grid, name="a"), two_point(1.5, unit_grid, name="b")
    oracle = vertex_oracle(A, B)
    assert oracle.value == pytest.approx(0.25, abs=1e-6)
    assert not oracle.upper_bound
    r = ddi_distance(A, B)
    assert r.upper_bound
    assert oracle.value - 1e-9 <= r.value <= 1.05 * oracle.value
    assert len(r.metric_couplings) == 5


def test_identical_instances_are_close(unit_grid):
    A = MmInstance.static(line_d(3), ProbabilityVector.uniform(3), unit_grid)
    assert ddi_distance(A, A).value < 1e-3


def test_symmetric(unit_grid):
    A = MmInstance.static(line_d(3), ProbabilityVector.normalized([1.0, 2.0, 1.0]), unit_grid, [0.0, 0.1, 0.0])
    B = two_point(1.5, unit_grid, [0.2, 0.0])
    ab, ba = ddi_distance(A, B), ddi_distance(B, A)
    assert ab.value == pytest.approx(ba.value, rel=1e-9)
    assert np.asarray(ab.coupling).shape == (3, 2)
    assert np.asarray(ba.coupling).shape == (2, 3)


def test_triangle_inequality_on_oracle_values(unit_grid):
    a, b, c = (two_point(d, unit_grid) for d in (1.0, 1.5, 2.2))
    ab, bc, ac = vertex_oracle(a, b).value, vertex_oracle(b, c).value, vertex_oracle(a, c).value
    assert ac <= ab + bc + 1e-7
    assert ac == pytest.approx(0.6, abs=1e-6)


def test_moving_distance_integrates_in_time(unit_grid):
    # d_t = 1 + t against d = 1: diagonal h_t = t / 2, trapezoid average of t^2 / 4
    D = np.array([two_point_d(1.0 + t) for t in unit_grid.times])
    A = MmInstance(unit_grid, D, ProbabilityVector.uniform(2), np.zeros((5, 2)))
    B = two_point(1.0, unit_grid)
    assert vertex_oracle(A, B).value == pytest.approx(math.sqrt(0.0859375), abs=1e-6)


def test_oracle_is_limited_to_small_instances(unit_grid):
    A = MmInstance.static(line_d(5), ProbabilityVector.uniform(5), unit_grid)
    B = MmInstance.static(line_d(4), ProbabilityVector.uniform(4), unit_grid)
    with pytest.raises(ValueError, match="small instances"):
        vertex_oracle(A, B)


def test_instances_share_grid(unit_grid):
    with pytest.raises(ValueError, match="time grid"):
        ddi_distance(one_point(unit_grid), one_point(TimeGrid.uniform(0.0, 1.0, 2)))


# ------------ slices ------------


def test_static_distance_and_modulus(unit_grid):
    assert static_transport_distance(
        two_point_d(1.0), two_point_d(1.5), ProbabilityVector.uniform(2), ProbabilityVector.uniform(2)
    ) == pytest.approx(0.25, abs=1e-6)
    D = np.array([two_point_d(1.0 + t) for t in unit_grid.times])
    Phi = modulus_of_continuity(MmInstance(unit_grid, D, ProbabilityVector.uniform(2), np.zeros((5, 2))))
    assert Phi(0.0) == 0.0
    assert Phi(0.25) == pytest.approx(0.25)
    assert Phi(1.0) == pytest.approx(1.0)


def test_slice_bound_static_pair(unit_grid):
    A, B = two_point(1.0, unit_grid), two_point(1.5, unit_grid)
    ddi = vertex_oracle(A, B)
    for s in unit_grid.times:
        sb = check_slice_bound(A, B, float(s), ddi=ddi)
        assert sb.holds
        # static slices: Phi vanishes and the full interval gives the smallest bound
        assert sb.window == (0.0, 1.0)
        assert sb.bound == pytest.approx(ddi.value)
        assert sb.static_value == pytest.approx(0.25, abs=1e-6)
        assert sb.continuous_bound >= sb.ddi_value


def test_slice_bound_moving_pair(unit_grid):
    D = np.array([two_point_d(1.0 + t) for t in unit_grid.times])
    A = MmInstance(unit_grid, D, ProbabilityVector.uniform(2), np.zeros((5, 2)))
    B = two_point(1.0, unit_grid)
    ddi = vertex_oracle(A, B)
    sb = check_slice_bound(A, B, 1.0, ddi=ddi)
    assert sb.static_value == pytest.approx(0.5, abs=1e-6)
    assert sb.holds


# ------------ random small instances ------------


def random_instance(rng, grid, name):
    n = int(rng.integers(1, 4))
    D = []
    for _ in grid.times:
        w = np.triu(rng.uniform(0.5, 2.0, size=(n, n)), 1)
        D.append(shortest_path(w + w.T, directed=False))
    m = ProbabilityVector.normalized(rng.uniform(0.2, 1.0, size=n))
    f = rng.uniform(0.0, 1.0, size=(grid.times.size, n))
    return MmInstance(grid, np.array(D), m, f, name=name)


def test_small_instances_are_vertex_verified(unit_grid):
    A = MmInstance.static(line_d(3), ProbabilityVector.normalized([1.0, 2.0, 1.0]), unit_grid)
    r = ddi_distance(A, two_point(1.5, unit_grid))
    assert r.vertex_verified and r.status == "converged"
    assert "minimum over every coupling vertex" in r.notes
    big = MmInstance.static(line_d(5), ProbabilityVector.uniform(5), unit_grid)
    r = ddi_distance(big, MmInstance.static(line_d(4), ProbabilityVector.uniform(4), unit_grid), alternation_rounds=2)
    assert not r.vertex_verified
    assert any("not vertex-verified" in note for note in r.notes)


def test_random_small_instances_match_the_oracle():
    rng = np.random.default_rng(3)
    grid = TimeGrid.uniform(0.0, 1.0, 2)
    for trial in range(20):
        a, b, c = (random_instance(rng, grid, name) for name in "abc")
        ab = ddi_distance(a, b)
        oracle = vertex_oracle(a, b).value
        assert oracle - 1e-6 <= ab.value <= 1.05 * oracle + 1e-9, trial
        assert ddi_distance(a, a).value <= 1e-6
        assert ddi_distance(b, a).value == pytest.approx(ab.value, abs=1e-6)
        bc, ac = ddi_distance(b, c).value, ddi_distance(a, c).value
        assert ac <= ab.value + bc + 2e-6
        for s in grid.times:
            assert check_slice_bound(a, b, float(s), ddi=ab).holds
