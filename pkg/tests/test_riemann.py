# tests/test_riemann.py
import math

import numpy as np
import pytest

from app.flows.model_metrics import flat, get_model
from app.flows.riemann import (
    ChartPotential,
    RiemannianFamily,
    check_backward_dynamic_convexity,
    check_distance_expansion,
    check_dynamic_convexity_tensor,
    check_evi_chart,
    check_N_srf_tensor,
    check_ricci_flow_tensor,
    check_srf_tensor,
    check_sub_rf_tensor,
    check_upper_ricci_tensor,
    check_weight_identity,
    curvature_ops,
    gradient_flow,
    reverse_family,
)
from app.flows.tgs import TimeGrid


@pytest.fixture
def half_grid():
    return TimeGrid.uniform(0.0, 0.5, 5)


def flat_line(grid, weight=None, half_width=1.0):
    return RiemannianFamily.conformal(flat(1, half_width), grid, weight=weight)


# ------------ Ricci flow equality on model charts ------------


def test_shrinking_sphere_is_ricci_flow(shrinking_sphere):
    v = check_ricci_flow_tensor(shrinking_sphere, tol=1e-5)
    assert v.holds
    assert v.extreme_eigenvalue == pytest.approx(0.0, abs=1e-9)
    assert v.samples == 25 * 6


def test_expanding_hyperbolic_is_ricci_flow(expanding_hyperbolic):
    assert check_ricci_flow_tensor(expanding_hyperbolic, tol=1e-5).holds
    assert check_srf_tensor(expanding_hyperbolic, tol=1e-5).holds
    assert check_sub_rf_tensor(expanding_hyperbolic, tol=1e-5).holds


def test_static_sphere_is_strict_super_ricci():
    fam = RiemannianFamily.conformal(get_model("sphere"), TimeGrid.uniform(0.0, 0.2, 2))
    assert check_srf_tensor(fam).holds
    sub = check_sub_rf_tensor(fam)
    assert not sub.holds
    assert sub.extreme_eigenvalue == pytest.approx(1.0)
    assert not check_ricci_flow_tensor(fam).holds


def test_fast_shrinking_sphere_fails():
    fam = RiemannianFamily.conformal(get_model("sphere"), TimeGrid.uniform(0.0, 0.2, 2), "1 - 4*t")
    v = check_srf_tensor(fam)
    assert not v.holds
    # Ric - g_S = -g_S, relative to g_t = (1 - 4t) g_S
    assert v.extreme_eigenvalue == pytest.approx(-1.0 / 0.2)
    assert v.witness["t"] == pytest.approx(0.2)


@pytest.mark.parametrize("name, point", [("sphere", [1.0, 0.2]), ("hyperbolic", [0.1, 1.0])])
def test_finite_differences_match_closed_form(name, point):
    fam = RiemannianFamily.conformal(get_model(name), TimeGrid.uniform(0.0, 0.25, 5), "1 + t")
    exact = curvature_ops(fam, 0.1, point)
    fd = curvature_ops(fam, 0.1, point, use_model=False)
    np.testing.assert_allclose(fd.christoffel, exact.christoffel, atol=1e-6)
    np.testing.assert_allclose(fd.ricci, exact.ricci, atol=1e-6)


def test_expression_metric_curvature():
    box = get_model("sphere").box
    fam = RiemannianFamily.from_expressions([["1", "0"], ["0", "sin(x)^2"]], box, TimeGrid.uniform(0.0, 0.2, 2))
    x = np.array([1.1, 0.0])
    ops = curvature_ops(fam, 0.0, x)
    np.testing.assert_allclose(ops.ricci, fam.g(0.0, x), atol=1e-6)
    assert check_srf_tensor(fam, tol=1e-5, per_axis=3).holds


def test_metric_must_be_positive_definite():
    fam = RiemannianFamily.from_expressions([["x"]], [(-1.0, 1.0)], TimeGrid.uniform(0.0, 0.2, 2))
    with pytest.raises(ValueError, match="positive definite"):
        fam.g(0.0, [-0.5])


def test_box_validation():
    with pytest.raises(ValueError):
        RiemannianFamily(dim=2, box=[(0.0, 1.0)], metric=lambda t, x: np.eye(2), time_grid=TimeGrid.uniform(0, 1, 1))


# ------------ N and upper bounds ------------


def test_N_threshold_on_flat_line(half_grid):
    weight = ChartPotential.from_expression("x^2/2", 1)
    # Hess f - f'^2 / (N - 1) = 1 - x^2 at N = 2
    inside = flat_line(half_grid, weight, half_width=1.0)
    v = check_N_srf_tensor(inside, 2.0, tol=1e-3, per_axis=9)
    assert v.holds
    outside = flat_line(half_grid, weight, half_width=1.02)
    w = check_N_srf_tensor(outside, 2.0, tol=1e-3, per_axis=9)
    assert not w.holds
    assert abs(w.witness["x"][0]) > 1.0
    assert check_N_srf_tensor(outside, math.inf).holds


def test_N_equal_dimension_needs_constant_weight(half_grid):
    weighted = flat_line(half_grid, ChartPotential.from_expression("x", 1))
    v = check_N_srf_tensor(weighted, 1.0)
    assert not v.holds and v.witness["reason"] == "weight not constant"
    assert check_N_srf_tensor(flat_line(half_grid), 1.0).holds
    with pytest.raises(ValueError):
        check_N_srf_tensor(weighted, 0.5)


def test_upper_ricci_on_shrinking_sphere(shrinking_sphere):
    # Ric = g_t / (1 - 2t), largest at t = 0.25
    assert check_upper_ricci_tensor(shrinking_sphere, 2.0, tol=1e-6).holds
    v = check_upper_ricci_tensor(shrinking_sphere, 1.5)
    assert not v.holds
    assert v.extreme_eigenvalue == pytest.approx(0.5)


# ------------ dynamic convexity of potentials ------------


def test_dynamic_convexity_of_zero_potential(shrinking_sphere, expanding_hyperbolic):
    zero = ChartPotential.zero()
    assert not check_dynamic_convexity_tensor(shrinking_sphere, zero).holds
    assert check_dynamic_convexity_tensor(expanding_hyperbolic, zero).holds
    assert not check_backward_dynamic_convexity(expanding_hyperbolic, zero).holds


def test_backward_form_matches_reversed_family(expanding_hyperbolic):
    V = ChartPotential.from_expression("x^2 + y", 2)
    back = check_backward_dynamic_convexity(expanding_hyperbolic, V, per_axis=3)
    rev = reverse_family(expanding_hyperbolic)
    fwd = check_dynamic_convexity_tensor(rev, V.reversed(0.0, 0.25), per_axis=3)
    assert back.extreme_eigenvalue == pytest.approx(fwd.extreme_eigenvalue, rel=1e-9)
    assert rev.time_grid.times.tolist() == pytest.approx(expanding_hyperbolic.time_grid.times.tolist())


# ------------ weight identity ------------


def test_weight_identity_conformal(shrinking_sphere):
    r = check_weight_identity(shrinking_sphere, per_axis=3)
    assert r.holds
    assert r.samples == 9 * 6


def test_weight_identity_expression_metric():
    fam = RiemannianFamily.from_expressions(
        [["exp(2*t)", "0"], ["0", "1 + t*x^2"]], [(-1.0, 1.0), (-1.0, 1.0)], TimeGrid.uniform(0.0, 0.5, 5)
    )
    assert check_weight_identity(fam, per_axis=3).holds


# ------------ gradient flows, expansion and EVI ------------


def test_gradient_flow_exponential(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.from_expression("x^2/2", 1)
    traj = gradient_flow(fam, V, (0.5, [0.4]), dt=0.05)
    assert not traj.truncated
    assert traj.times[0] == pytest.approx(0.0)
    np.testing.assert_allclose(traj.points[:, 0], 0.4 * np.exp(traj.times - 0.5), rtol=1e-7)
    np.testing.assert_allclose(traj.velocities, traj.points, rtol=1e-9)


def test_gradient_flow_truncated_at_boundary(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.from_expression("-2*x", 1)
    traj = gradient_flow(fam, V, (0.5, [0.5]), dt=0.05)
    # backward in time x grows by 2 per unit, leaving [-1, 1] at t = 0.25
    assert traj.truncated
    assert traj.times[0] > 0.2


def test_gradient_flow_rejects_bad_terminal(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.zero()
    with pytest.raises(ValueError):
        gradient_flow(fam, V, (0.5, [1.5]))
    with pytest.raises(ValueError):
        gradient_flow(fam, V, (0.0, [0.1]))


def test_distance_expansion(half_grid):
    fam = flat_line(half_grid)
    up = check_distance_expansion(fam, ChartPotential.from_expression("x^2/2", 1), [0.2], [0.4], dt=0.05)
    assert up.holds and up.min_increment > 0
    down = check_distance_expansion(fam, ChartPotential.from_expression("-x^2/2", 1), [0.2], [0.4], dt=0.05)
    assert not down.holds
    assert down.witness_index is not None
    assert down.distances[0] > down.distances[-1]


def test_evi_chart_convex_potential(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.from_expression("x^2/2", 1)
    traj = gradient_flow(fam, V, (0.5, [0.4]), dt=0.05)
    zs = [[-0.5], [0.0], [0.8]]
    r = check_evi_chart(fam, V, traj, zs)
    assert r.holds
    # slack is (x - z)^2 / 2 on the flat line
    for s in r.slacks:
        x = float(np.interp(s.t, traj.times, traj.points[:, 0]))
        assert s.slack == pytest.approx(0.5 * (x - s.z[0]) ** 2, abs=1e-6)


def test_evi_chart_concave_potential_fails(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.from_expression("-x^2/2", 1)
    traj = gradient_flow(fam, V, (0.5, [0.2]), dt=0.05)
    r = check_evi_chart(fam, V, traj, [[0.9]])
    assert not r.holds
    assert r.witness.slack < 0


def test_evi_chart_N_term_lowers_slack(half_grid):
    fam = flat_line(half_grid)
    V = ChartPotential.from_expression("x^2/2", 1)
    traj = gradient_flow(fam, V, (0.5, [0.4]), dt=0.05)
    plain = check_evi_chart(fam, V, traj, [[-0.5]])
    finite = check_evi_chart(fam, V, traj, [[-0.5]], N=2.0)
    assert finite.N == 2.0
    assert finite.min_slack < plain.min_slack
