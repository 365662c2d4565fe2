# app/flows/transport.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import logging
import math

import numpy as np

from app.flows.network_simplex import solve_transport
from app.flows.tgs import DiscreteGeodesicSpace, partition_extremum
from app.settings import settings

logger = logging.getLogger(__name__)


# ------------ Measures and couplings ------------


@dataclass(frozen=True)
class ProbabilityVector:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array.")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative.")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum():.15g}).")
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, weights) -> "ProbabilityVector":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def point_mass(cls, x: int, n: int) -> "ProbabilityVector":
        w = np.zeros(n)
        w[x] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, n: int, support: Optional[Sequence[int]] = None) -> "ProbabilityVector":
        w = np.zeros(n)
        idx = list(range(n)) if support is None else list(support)
        w[idx] = 1.0 / len(idx)
        return cls.normalized(w)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float], n: int) -> "ProbabilityVector":
        w = np.zeros(n)
        for x, weight in mapping.items():
            if not 0 <= int(x) < n:
                raise ValueError(f"vertex {x} outside the space")
            w[int(x)] += float(weight)
        return cls.normalized(w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def support(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.weights > 0)]


@dataclass
class Coupling:
    matrix: np.ndarray
    mu: ProbabilityVector
    nu: ProbabilityVector

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=float)
        if np.any(q < -1e-15):
            raise ValueError("coupling entries must be nonnegative.")
        if np.max(np.abs(q.sum(axis=1) - self.mu.weights)) > 1e-10:
            raise ValueError("coupling row sums differ from mu.")
        if np.max(np.abs(q.sum(axis=0) - self.nu.weights)) > 1e-10:
            raise ValueError("coupling column sums differ from nu.")
        self.matrix = np.clip(q, 0.0, None)

    def atoms(self) -> List[Tuple[int, int, float]]:
        rows, cols = np.nonzero(self.matrix > 0)
        return [(int(x), int(y), float(self.matrix[x, y])) for x, y in zip(rows, cols)]


@dataclass
class TdMmSpace:
    space: DiscreteGeodesicSpace
    m: ProbabilityVector
    f: np.ndarray                 # shape (M+1, n)
    f_bound: Optional[float] = None
    name: str = "tdmm"

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        shape = (self.space.times.size, self.space.n_vertices)
        if self.f.shape != shape:
            raise ValueError(f"weights f must have shape {shape}.")
        if self.m.n != self.space.n_vertices:
            raise ValueError("reference measure lives on a different vertex set.")
        if not np.all(np.isfinite(self.f)):
            raise ValueError("weights f must be finite.")
        bound = float(np.abs(self.f).max())
        if self.f_bound is None:
            self.f_bound = bound
        elif bound > self.f_bound + 1e-12:
            raise ValueError(f"|f| = {bound:.6g} exceeds the declared bound {self.f_bound:.6g}.")

    @classmethod
    def unweighted(cls, space: DiscreteGeodesicSpace, m: Optional[ProbabilityVector] = None) -> "TdMmSpace":
        m = m or ProbabilityVector.uniform(space.n_vertices)
        return cls(space, m, np.zeros((space.times.size, space.n_vertices)))

    def f_at(self, t: float) -> np.ndarray:
        return self.f[self.space.time_grid.index_of(t)]

    def f_interp(self, t: float) -> np.ndarray:
        times = self.space.times
        return np.array([np.interp(t, times, self.f[:, x]) for x in range(self.space.n_vertices)])

    def m_t(self, t: float) -> np.ndarray:
        return np.exp(-self.f_at(t)) * self.m.weights

    def normalized_at(self, T: float) -> "TdMmSpace":
        """
        Reference m_T / m_T(X) with weights f_t - f_T, so f_T = 0 there and every m_t
        changes by the constant factor 1 / m_T(X).
        """
        if not np.isclose(self.space.times, T).any():
            logger.debug("%s: reference time %.6g is off the grid, interpolating f linearly", self.name, T)
        fT = self.f_interp(T)
        mT = np.exp(-fT) * self.m.weights
        f_new = self.f - fT[None, :]
        return TdMmSpace(self.space, ProbabilityVector.normalized(mT), f_new, name=self.name)


@dataclass
class MeasurePath:
    taus: np.ndarray
    measures: List[ProbabilityVector]
    time: float
    is_geodesic: bool = False
    coupling: Optional[Coupling] = field(default=None, repr=False)
    truncated: bool = False

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        if self.taus.size < 2 or self.taus.size != len(self.measures):
            raise ValueError("A measure path needs at least two tau nodes, one measure each.")
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("tau grid must be strictly increasing.")


# ------------ Wasserstein distance ------------


def wasserstein(
    space: DiscreteGeodesicSpace, t: float, mu: ProbabilityVector, nu: ProbabilityVector, exact: bool = False
) -> Tuple[float, Coupling]:
    """L2-Wasserstein distance w.r.t. d_t with an optimal vertex coupling."""
    if mu.n != space.n_vertices or nu.n != space.n_vertices:
        raise ValueError("measures must live on the space's vertices.")
    D = space.distance(t)
    sol = solve_transport(mu.weights, nu.weights, D ** 2, exact=exact)
    return math.sqrt(max(sol.cost, 0.0)), Coupling(sol.flow, mu, nu)


def wasserstein_sq_at_index(space: DiscreteGeodesicSpace, k: int, mu: ProbabilityVector, nu: ProbabilityVector) -> float:
    D = space.distance_at_index(k)
    return max(solve_transport(mu.weights, nu.weights, D ** 2).cost, 0.0)


def displacement_interpolation(
    space: DiscreteGeodesicSpace, t: float, coupling: Coupling, tau: float, selection: int = 0
) -> ProbabilityVector:
    """
    Moves each atom q(x,y) to the vertex nearest to arc length tau*d_t(x,y) along a
    shortest path. selection = 0 uses the lexicographically smallest path, k > 0 the
    k-th enumerated path.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1].")
    if tau == 0.0:
        return coupling.mu
    if tau == 1.0:
        return coupling.nu
    out = np.zeros(space.n_vertices)
    for x, y, q in coupling.atoms():
        out[atom_position(space, t, x, y, tau, selection)] += q
    return ProbabilityVector.normalized(out)


def atom_position(space: DiscreteGeodesicSpace, t: float, x: int, y: int, tau: float, selection: int = 0) -> int:
    """Vertex of the selected shortest x -> y path nearest to arc length tau*d_t(x,y); first one on ties."""
    if x == y:
        return x
    oracle = space.oracle(t)
    D = space.distance(t)
    path = oracle.canonical_path(x, y) if selection == 0 else oracle.path_by_index(x, y, selection)
    arc = np.concatenate([[0.0], np.cumsum([D[a, b] for a, b in zip(path[:-1], path[1:])])])
    return path[int(np.argmin(np.abs(arc - tau * D[x, y])))]


def interpolate_geodesic(
    space: DiscreteGeodesicSpace,
    t: float,
    mu: ProbabilityVector,
    nu: ProbabilityVector,
    taus: Optional[Sequence[float]] = None,
    selection: int = 0,
    coupling: Optional[Coupling] = None,
) -> MeasurePath:
    if taus is None:
        taus = np.linspace(0.0, 1.0, settings.tau_nodes)
    if coupling is None:
        _, coupling = wasserstein(space, t, mu, nu)
    truncated = False
    if selection:
        oracle = space.oracle(t)
        for x, y, _ in coupling.atoms():
            if x != y:
                truncated = truncated or oracle.paths(x, y)[1]
    if truncated:
        logger.warning("path enumeration hit path_cap at t=%.6g; selection %d may miss geodesics", t, selection)
    measures = [displacement_interpolation(space, t, coupling, float(tau), selection) for tau in taus]
    return MeasurePath(np.asarray(taus, dtype=float), measures, t, True, coupling, truncated)


def selection_count(space: DiscreteGeodesicSpace, t: float, coupling: Coupling) -> Tuple[int, bool]:
    """Number of distinct path selections worth trying, and whether any pair hit the cap."""
    oracle = space.oracle(t)
    count, truncated = 1, False
    for x, y, _ in coupling.atoms():
        if x != y:
            paths, capped = oracle.paths(x, y)
            count = max(count, len(paths))
            truncated = truncated or capped
    return count, truncated


# ------------ Entropy ------------


def entropy_decomposition(mu: ProbabilityVector, tdmm: TdMmSpace, t: float) -> Tuple[float, float]:
    """(Ent(mu|m), int f_t dmu); Ent is +inf when mu charges an m-null vertex."""
    w, m = mu.weights, tdmm.m.weights
    pos = w > 0
    if np.any(m[pos] <= 0):
        return math.inf, float(np.dot(tdmm.f_at(t)[pos], w[pos]))
    ent = float(np.sum(w[pos] * np.log(w[pos] / m[pos])))
    return ent, float(np.dot(tdmm.f_at(t)[pos], w[pos]))


def entropy(mu: ProbabilityVector, tdmm: TdMmSpace, t: float) -> float:
    """S_t(mu) = sum rho log rho m_t with mu = rho m_t, m_t = exp(-f_t) m."""
    w = mu.weights
    mt = tdmm.m_t(t)
    pos = w > 0
    if np.any(mt[pos] <= 0):
        return math.inf
    return float(np.sum(w[pos] * np.log(w[pos] / mt[pos])))


# ------------ Path functionals ------------


def _pairwise_w2(space: DiscreteGeodesicSpace, k: int, measures: List[ProbabilityVector]) -> np.ndarray:
    n = len(measures)
    W2 = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            W2[i, j] = W2[j, i] = wasserstein_sq_at_index(space, k, measures[i], measures[j])
    return W2


def measure_path_functionals(space: DiscreteGeodesicSpace, path: MeasurePath, t: Optional[float] = None):
    """
    (action, strain) of a measure curve: sup of sum W_t^2/dtau and inf of sum of the
    backward difference of W^2 over dtau, both over sub-partitions of the tau grid.
    """
    t = path.time if t is None else t
    k = space.time_grid.index_of(t)
    if k == 0:
        raise ValueError("no left difference")
    W2_t = _pairwise_w2(space, k, path.measures)
    W2_s = _pairwise_w2(space, k - 1, path.measures)
    dW2 = (W2_t - W2_s) / (space.times[k] - space.times[k - 1])
    act = partition_extremum(path.taus, lambda i, j: W2_t[i, j], maximize=True)
    stn = partition_extremum(path.taus, lambda i, j: dW2[i, j], maximize=False)
    return act, stn


def measure_path_action(space: DiscreteGeodesicSpace, path: MeasurePath, t: Optional[float] = None) -> float:
    k = space.time_grid.index_of(path.time if t is None else t)
    W2 = _pairwise_w2(space, k, path.measures)
    return partition_extremum(path.taus, lambda i, j: W2[i, j], maximize=True)


@dataclass
class BoundTransfer:
    c1: float
    c2: float
    lhs: float     # W_t^2
    rhs: float     # C1 + C2 W_s^2
    holds: bool


def wasserstein_bound_transfer(
    space: DiscreteGeodesicSpace, s: float, t: float, mu: ProbabilityVector, nu: ProbabilityVector, c1: float = 0.0
) -> BoundTransfer:
    """Smallest C2 with d_t^2 <= C1 + C2 d_s^2 pointwise, then the same bound for W."""
    Dt2, Ds2 = space.distance(t) ** 2, space.distance(s) ** 2
    off = ~np.eye(space.n_vertices, dtype=bool)
    c2 = float(np.max((Dt2[off] - c1) / Ds2[off])) if off.any() else 0.0
    c2 = max(c2, 0.0)
    lhs = wasserstein(space, t, mu, nu)[0] ** 2
    rhs = c1 + c2 * wasserstein(space, s, mu, nu)[0] ** 2
    return BoundTransfer(c1=c1, c2=c2, lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-9)
