# app/flows/dynconv.py
"""
Dynamic convexity of a potential V_t on a time-dependent geodesic space.

Every check runs at one interior grid time t over the enumerated d_t-geodesics between
endpoint pairs. Time derivatives are backward grid differences, tau-derivatives at the
endpoints are one-sided differences over the first/last parameter step, and the
sigma-integrals use the trapezoid rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.integrate import trapezoid

from app.flows.convexity1d import green_chi, lambda_weight, phi_N
from app.flows.tgs import (
    DiscreteGeodesic,
    DiscreteGeodesicSpace,
    TimeGrid,
    enumerate_geodesics,
    estimate_controls,
    left_difference_sq,
    partition_extremum,
)
from app.settings import settings

logger = logging.getLogger(__name__)

FORMS = ("slope", "strain", "integrated", "moderate", "triple", "single-slope")


# ------------ Potentials ------------


@dataclass
class Potential:
    """V(t, x) on vertices; +inf marks points outside Dom(V_t)."""
    evaluator: Callable[[float, int], float]
    name: str = "potential"

    def __call__(self, t: float, x: int) -> float:
        return float(self.evaluator(t, x))

    def in_domain(self, t: float, x: int) -> bool:
        return self(t, x) < math.inf

    def along(self, gamma, t: Optional[float] = None) -> np.ndarray:
        t = gamma.time if t is None else t
        return np.array([self(t, x) for x in gamma.points])

    @classmethod
    def quadratic(cls, space: DiscreteGeodesicSpace, coeff: float, center=None) -> "Potential":
        """V(x) = coeff/2 |coords(x) - center|^2."""
        if space.coords is None:
            raise ValueError("quadratic potential needs vertex coordinates.")
        coords = np.asarray(space.coords, dtype=float)
        c = np.zeros(coords.shape[1]) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
        values = 0.5 * coeff * np.sum((coords - c) ** 2, axis=1)
        return cls(lambda t, x: values[x], name=f"quadratic({coeff:g})")

    @classmethod
    def entropy_delegate(cls, tdmm) -> "Potential":
        """V_t(x) = S_t(delta_x) = -log m_t(x)."""
        def evaluate(t: float, x: int) -> float:
            mt = tdmm.m_t(t)[x]
            return math.inf if mt <= 0 else -math.log(mt)
        return cls(evaluate, name=f"entropy({tdmm.name})")

    @classmethod
    def tabulated(cls, space: DiscreteGeodesicSpace, table) -> "Potential":
        """Values per (grid time, vertex); a single row is used for every time."""
        table = np.atleast_2d(np.asarray(table, dtype=float))
        if table.shape[1] != space.n_vertices or table.shape[0] not in (1, space.times.size):
            raise ValueError("tabulated potential has the wrong shape.")
        if np.any(np.isnan(table)):
            raise ValueError("tabulated potential contains NaN.")
        grid = space.time_grid

        def evaluate(t: float, x: int) -> float:
            return float(table[0 if table.shape[0] == 1 else grid.index_of(t), x])
        return cls(evaluate, name="tabulated")


# ------------ Reports ------------


class GeodesicSlack(BaseModel):
    endpoints: List[int]
    points: List[int]
    min_slack: float


class DynConvexityReport(BaseModel):
    form: str
    t: float
    N: Optional[float] = None
    lam: Optional[float] = None
    holds: bool
    status: str                     # pass | fail | undetermined
    min_slack: float
    tolerance: float
    geodesics: List[GeodesicSlack] = []
    witness: Optional[GeodesicSlack] = None
    skipped: int = 0


class EviSlack(BaseModel):
    t: float
    z: int
    slack: float


class EviReport(BaseModel):
    N: Optional[float] = None
    holds: bool
    min_slack: float
    tolerance: float
    slacks: List[EviSlack] = []
    witness: Optional[EviSlack] = None


# ------------ Slack arithmetic ------------


def _sub(a: float, b: float) -> float:
    """a - b with (+inf) - (+inf) = (-inf) - (-inf) = +inf."""
    if math.isinf(a) and math.isinf(b) and (a > 0) == (b > 0):
        return math.inf
    return a - b


def _slope(v1: float, v0: float, h: float) -> float:
    return _sub(v1, v0) / h


@dataclass
class _Profile:
    """V and the metric data sampled along one geodesic."""
    params: np.ndarray
    values: np.ndarray
    D2: np.ndarray      # d_t^2 between curve points
    dD2: np.ndarray     # backward difference of d^2 between curve points

    @classmethod
    def build(cls, space: DiscreteGeodesicSpace, gamma: DiscreteGeodesic, V: Potential, t: float) -> "_Profile":
        idx = np.asarray(gamma.points)
        k = space.time_grid.index_of(t)
        D = space.distance_at_index(k)[np.ix_(idx, idx)]
        dD = left_difference_sq(space, t)[np.ix_(idx, idx)]
        return cls(gamma.params, V.along(gamma, t), D ** 2, dD)

    def at(self, tau: float) -> int:
        return int(np.argmin(np.abs(self.params - tau)))

    @property
    def v0(self) -> float:
        return float(self.values[0])

    @property
    def v1(self) -> float:
        return float(self.values[-1])

    def slopes(self) -> Tuple[float, float]:
        """(d/dtau at 0+, d/dtau at 1-)."""
        p, v = self.params, self.values
        return _slope(v[1], v[0], p[1] - p[0]), _slope(v[-1], v[-2], p[-1] - p[-2])

    def energy(self, weight: Callable[[float], float]) -> float:
        """int weight(sigma) |d/dsigma V|^2 dsigma, piecewise on the parameter grid."""
        widths = np.diff(self.params)
        dv = np.diff(self.values) / widths
        if not np.all(np.isfinite(dv)):
            return math.inf
        mids = 0.5 * (self.params[:-1] + self.params[1:])
        return float(sum(weight(float(m)) * d * d * w for m, d, w in zip(mids, dv, widths)))

    def strain(self) -> float:
        return partition_extremum(self.params, lambda i, j: self.dD2[i, j], maximize=False)

    def interior_taus(self, upper: float, inclusive: bool) -> List[int]:
        p = self.params
        if inclusive:
            return [i for i in range(1, p.size) if p[i] <= upper + 1e-12]
        return [i for i in range(1, p.size) if p[i] < upper - 1e-12]


# ------------ Form slacks ------------


def _form_slacks(prof: _Profile, form: str, N: float, lam: float) -> List[float]:
    """Slack per tested configuration of one geodesic (one value for slope-type forms)."""
    inv_n = 0.0 if math.isinf(N) else 1.0 / N
    v0, v1 = prof.v0, prof.v1
    d2, dd2 = float(prof.D2[0, -1]), float(prof.dD2[0, -1])

    if form == "slope":
        left, right = prof.slopes()
        return [_sub(right, left) + 0.5 * dd2 - inv_n * (v0 - v1) ** 2]

    if form == "strain":
        left, right = prof.slopes()
        penalty = inv_n * prof.energy(lambda s: 1.0) if inv_n else 0.0
        return [_sub(right, left) + 0.5 * prof.strain() - penalty]

    if form == "single-slope":
        left, _ = prof.slopes()
        p = prof.params
        integrand = np.array([0.0] + [prof.dD2[0, i] / p[i] for i in range(1, p.size)])
        rhs = v1 - v0 + 0.5 * trapezoid(integrand, p)
        if inv_n:
            rhs -= inv_n * prof.energy(lambda s: 1.0 - s)
        return [_sub(rhs, left)]

    if form == "triple":
        ns = settings.sigma_nodes
        sigmas = np.linspace(0.0, 1.0, ns + 1)[:-1]
        out = []
        for i in range(1, prof.params.size - 1):
            tau = float(prof.params[i])
            lhs = prof.values[i] - (1 - tau) * v0 - tau * v1
            g = np.array([prof.dD2[prof.at(s * tau), prof.at(1 - s + s * tau)] / (1 - s) for s in sigmas])
            rhs = 0.5 * tau * (1 - tau) * trapezoid(g, sigmas)
            if inv_n:
                rhs -= inv_n * prof.energy(lambda s, tau=tau: green_chi(tau, s))
            out.append(_sub(rhs, lhs))
        return out

    if form == "integrated":
        out = []
        for i in prof.interior_taus(0.5, inclusive=False):
            tau = float(prof.params[i])
            lhs = v0 + v1 - prof.values[i] - prof.values[prof.at(1 - tau)]
            nodes = prof.params[: i + 1]
            g = np.array([prof.dD2[prof.at(s), prof.at(1 - s)] / (1 - 2 * s) for s in nodes])
            slack = lhs + 0.5 * trapezoid(g, nodes)
            if inv_n:
                slack -= tau * inv_n * prof.energy(lambda s, tau=tau: lambda_weight(tau, s))
            out.append(slack)
        return out

    if form == "moderate":
        out = []
        for i in prof.interior_taus(0.5, inclusive=True):
            tau = float(prof.params[i])
            a = v0 - prof.values[i]
            b = v1 - prof.values[prof.at(1 - tau)]
            rest = 0.5 * tau * dd2 + lam * tau * tau * d2
            if not inv_n:
                out.append(a + b + rest)
                continue
            # slack is affine in 1/N', so the admissible range is decided at its two ends
            floor = 2 * tau * (abs(v0 - v1) + 0.5 * lam * d2)
            cands = [math.inf, max(N, floor)]
            out.append(min(
                phi_N(a, n) + phi_N(b, n) + rest - (0.0 if math.isinf(n) else tau * (v0 - v1) ** 2 / n)
                for n in cands
            ))
        return out

    raise ValueError(f"unknown form '{form}'; expected one of {', '.join(FORMS)}")


def _status(holds: bool, truncated: bool) -> str:
    if holds:
        return "pass"
    return "undetermined" if truncated else "fail"


def _run_forms(
    space: DiscreteGeodesicSpace,
    V: Potential,
    t: float,
    form: str,
    N: float,
    lam: Optional[float],
    tol: Optional[float],
    pairs: Optional[Sequence[Tuple[int, int]]],
) -> DynConvexityReport:
    if form not in FORMS:
        raise ValueError(f"unknown form '{form}'; expected one of {', '.join(FORMS)}")
    if not N >= 1:
        raise ValueError("N must lie in [1, inf].")
    tol = settings.default_tolerance if tol is None else tol
    space.time_grid.left_neighbor(t)
    if form == "moderate" and lam is None:
        lam = estimate_controls(space).lambda_at(t)
    lam_used = lam if form == "moderate" else None
    lam = 0.0 if lam is None else lam

    if pairs is None:
        n = space.n_vertices
        pairs = [(x, y) for x in range(n) for y in range(n) if x != y]

    records: List[GeodesicSlack] = []
    skipped = 0
    unresolved = 0
    refuted = False   # a failing pair whose geodesic enumeration was complete
    for x0, x1 in pairs:
        if not (V.in_domain(t, x0) and V.in_domain(t, x1)):
            skipped += 1
            continue
        geos, truncated = enumerate_geodesics(space, t, x0, x1)
        per_geo = []
        for g in geos:
            # one edge, no interior vertex: nothing to sample on this mesh
            if len(g.points) < 3:
                unresolved += 1
                continue
            slacks = _form_slacks(_Profile.build(space, g, V, t), form, N, lam)
            per_geo.append(GeodesicSlack(endpoints=[x0, x1], points=list(g.points), min_slack=min(slacks) if slacks else math.inf))
        if not per_geo:
            continue
        if form == "moderate":
            best = max(per_geo, key=lambda r: r.min_slack)
            records.append(best)
            if best.min_slack < -tol and not truncated:
                refuted = True
        else:
            records.extend(per_geo)
            refuted = refuted or any(r.min_slack < -tol for r in per_geo)

    if not records:
        raise ValueError("no geodesics to check")
    if skipped:
        logger.info("%d endpoint pairs outside Dom(V_t) skipped", skipped)
    if unresolved:
        logger.debug("%d single-edge geodesics carry no interior sample", unresolved)
    witness = min(records, key=lambda r: r.min_slack)
    holds = witness.min_slack >= -tol
    status = "pass" if holds else ("fail" if refuted else "undetermined")
    return DynConvexityReport(
        form=form,
        t=float(t),
        N=None if math.isinf(N) else float(N),
        lam=lam_used,
        holds=holds,
        status=status,
        min_slack=witness.min_slack,
        tolerance=tol,
        geodesics=records,
        witness=None if holds else witness,
        skipped=skipped,
    )


def check_dynamic_convexity(
    space: DiscreteGeodesicSpace,
    V: Potential,
    t: float,
    form: str = "slope",
    tol: Optional[float] = None,
    lam: Optional[float] = None,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> DynConvexityReport:
    """
    Strong dynamic convexity of V at grid time t in one of its equivalent forms:
      slope         d+V(1-) - d-V(0+) >= -1/2 dt- d^2(x0,x1)
      strain        same with the strain of the geodesic on the right
      integrated    V0 + V1 - V(tau) - V(1-tau) >= -1/2 int_0^tau dt- d^2(g^s, g^{1-s}) / (1-2s) ds
      moderate      V0 + V1 - V(tau) - V(1-tau) >= -tau/2 dt- d^2 - lam tau^2 d^2 (best geodesic)
      triple        V(tau) - (1-tau)V0 - tau V1 <= tau(1-tau)/2 int_0^1 dt- d^2(...) / (1-s) ds
      single-slope  d-V(0+) <= V1 - V0 + 1/2 int_0^1 dt- d^2(g^0, g^s) / s ds
    """
    return _run_forms(space, V, t, form, math.inf, lam, tol, pairs)


def check_dynamic_N_convexity(
    space: DiscreteGeodesicSpace,
    V: Potential,
    t: float,
    N: float,
    form: str = "slope",
    tol: Optional[float] = None,
    lam: Optional[float] = None,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> DynConvexityReport:
    """N-strengthened forms; N = inf reproduces check_dynamic_convexity."""
    return _run_forms(space, V, t, form, N, lam, tol, pairs)


def check_weak_difference(
    space: DiscreteGeodesicSpace,
    V: Potential,
    t: float,
    K: float,
    lam: Optional[float] = None,
    tol: Optional[float] = None,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> DynConvexityReport:
    """
    V(x0) + V(x1) - V(g^tau) - V(g^{1-tau}) >= (K tau - lam tau^2) d_t^2 for some geodesic.
    Summing the K-convexity inequality at tau and 1 - tau gives it with lam = K.
    """
    tol = settings.default_tolerance if tol is None else tol
    lam = K if lam is None else lam
    if pairs is None:
        n = space.n_vertices
        pairs = [(x, y) for x in range(n) for y in range(x + 1, n)]
    records: List[GeodesicSlack] = []
    for x0, x1 in pairs:
        geos, _ = enumerate_geodesics(space, t, x0, x1)
        best: Optional[GeodesicSlack] = None
        for g in geos:
            v = V.along(g, t)
            d2 = g.length ** 2
            slacks = []
            for i, tau in enumerate(g.params):
                if 0 < tau <= 0.5 + 1e-12:
                    j = int(np.argmin(np.abs(g.params - (1 - tau))))
                    slacks.append(v[0] + v[-1] - v[i] - v[j] - (K * tau - lam * tau * tau) * d2)
            rec = GeodesicSlack(endpoints=[x0, x1], points=list(g.points), min_slack=min(slacks) if slacks else math.inf)
            if best is None or rec.min_slack > best.min_slack:
                best = rec
        if best is not None:
            records.append(best)
    if not records:
        raise ValueError("no geodesics to check")
    witness = min(records, key=lambda r: r.min_slack)
    holds = witness.min_slack >= -tol
    return DynConvexityReport(
        form="weak-difference", t=float(t), lam=lam, holds=holds, status="pass" if holds else "fail",
        min_slack=witness.min_slack, tolerance=tol, geodesics=records, witness=None if holds else witness,
    )


# ------------ Midpoint construction ------------


def build_min_geodesic(
    space: DiscreteGeodesicSpace, V: Potential, t: float, x0: int, x1: int, depth: int, tol: Optional[float] = None
) -> DiscreteGeodesic:
    """Dyadic geodesic whose every midpoint minimizes V_t among admissible midpoints."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not (V.in_domain(t, x0) and V.in_domain(t, x1)):
        raise ValueError("endpoints must lie in Dom(V_t)")
    D = space.distance(t)
    n = space.n_vertices
    base_tol = settings.mesh_tolerance if tol is None else tol

    def midpoint(a: int, b: int) -> int:
        if a == b:
            return a
        eps = base_tol * max(1.0, float(D[a, b]))
        cands = [
            z for z in range(n)
            if abs(D[a, z] - D[z, b]) <= eps and abs(D[a, z] + D[z, b] - D[a, b]) <= eps
        ]
        if not cands:
            raise ValueError("mesh too coarse")
        return min(cands, key=lambda z: (V(t, z), z))

    points = [x0, x1]
    for _ in range(depth):
        refined = [points[0]]
        for a, b in zip(points[:-1], points[1:]):
            refined.extend([midpoint(a, b), b])
        points = refined
    params = np.linspace(0.0, 1.0, len(points))
    return DiscreteGeodesic(params, points, t, space)


# ------------ EVI ------------


def _bzero(prof: _Profile) -> float:
    """int_0^1 strain(gamma restricted to [0, s]) ds; the restriction keeps its parametrization."""
    p = prof.params
    vals = [0.0]
    for i in range(1, p.size):
        vals.append(partition_extremum(p[: i + 1], lambda a, b: prof.dD2[a, b], maximize=False))
    return float(trapezoid(np.array(vals), p))


def check_evi(
    space: DiscreteGeodesicSpace,
    V: Potential,
    trajectory: Sequence[int],
    z_points: Optional[Sequence[int]] = None,
    tol: Optional[float] = None,
    N: float = math.inf,
) -> EviReport:
    """
    Upward EVI along a vertex trajectory x_t sampled on the grid:
      1/2 ds- d_t^2(x_s, z)|s=t- + 1/2 b0_t(gamma) - V_t(x_t) + V_t(z) [- 1/N int (1-b) |dV|^2] >= 0
    for every interior grid time and comparison point z; gamma is the canonical geodesic x_t -> z.
    """
    times = space.times
    if len(trajectory) != times.size:
        raise ValueError("trajectory needs one point per grid time.")
    tol = settings.default_tolerance if tol is None else tol
    z_points = list(range(space.n_vertices)) if z_points is None else list(z_points)
    inv_n = 0.0 if math.isinf(N) else 1.0 / N

    out: List[EviSlack] = []
    for k in range(1, times.size):
        t = float(times[k])
        x_now, x_prev = trajectory[k], trajectory[k - 1]
        D = space.distance_at_index(k)
        dt = times[k] - times[k - 1]
        for z in z_points:
            if not V.in_domain(t, z):
                continue
            ds = 0.5 * (D[x_now, z] ** 2 - D[x_prev, z] ** 2) / dt
            slack = ds - V(t, x_now) + V(t, z)
            if x_now != z:
                g = DiscreteGeodesic.from_path(space, space.oracle(t).canonical_path(x_now, z), t)
                prof = _Profile.build(space, g, V, t)
                slack += 0.5 * _bzero(prof)
                if inv_n:
                    slack -= inv_n * prof.energy(lambda b: 1.0 - b)
            out.append(EviSlack(t=t, z=int(z), slack=float(slack)))
    if not out:
        raise ValueError("no comparison points in Dom(V)")
    witness = min(out, key=lambda r: r.slack)
    holds = witness.slack >= -tol
    return EviReport(
        N=None if math.isinf(N) else N, holds=holds, min_slack=witness.slack, tolerance=tol,
        slacks=out, witness=None if holds else witness,
    )


# ------------ Reparametrization ------------


def _check_rescalable(times: np.ndarray, K: float) -> None:
    bad = times[2 * K * times >= 1]
    if bad.size:
        raise ValueError(f"grid time {bad[0]:g} violates 2Kt < 1 for K={K:g}")


def reparametrize_K(space: DiscreteGeodesicSpace, K: float) -> DiscreteGeodesicSpace:
    """d~_t^2 = (1 - 2Kt) d^2_{s(t)} with s(t) = -log(1 - 2Kt) / (2K); lengths at s(t) are interpolated."""
    if K == 0:
        return space.with_lengths(space.lengths.copy())
    times = space.times
    _check_rescalable(times, K)
    rows = []
    for t in times:
        s = -math.log(1 - 2 * K * t) / (2 * K)
        rows.append(math.sqrt(1 - 2 * K * t) * space.lengths_at(s))
    return space.with_lengths(np.array(rows), name=f"{space.name}-K{K:g}")


def static_rescaled(space: DiscreteGeodesicSpace, K: float, grid: Optional[TimeGrid] = None) -> DiscreteGeodesicSpace:
    """d_t^2 = (1 - 2Kt) d^2 built from the first slice of space."""
    grid = grid or space.time_grid
    _check_rescalable(grid.times, K)
    factors = np.sqrt(1 - 2 * K * grid.times)
    return space.with_lengths(np.outer(factors, space.lengths[0]), grid, f"{space.name}-static-K{K:g}")
