# app/flows/tgs.py
"""
Discretized time-dependent geodesic spaces.

A space is a finite connected graph whose edge lengths depend on time. Distances are
shortest-path distances per grid time; geodesics are vertex paths re-parametrized to
constant speed (parameters snap to arc-length positions of the vertices).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import logging
import math

import networkx as nx
import numpy as np

from app.settings import settings

logger = logging.getLogger(__name__)


# ------------ Time grid ------------


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    left_open: bool = True

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("TimeGrid needs at least two times.")
        if np.any(np.diff(times) <= 0):
            raise ValueError("TimeGrid times must be strictly increasing.")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, start: float, stop: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(start, stop, steps + 1))

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a grid time.")
        return k

    def left_neighbor(self, t: float) -> float:
        k = self.index_of(t)
        if k == 0:
            raise ValueError("no left difference")
        return float(self.times[k - 1])

    def right_neighbor(self, t: float) -> float:
        k = self.index_of(t)
        if k == self.M:
            raise ValueError("no right difference")
        return float(self.times[k + 1])

    def interior(self) -> List[float]:
        """Grid times that have a left neighbour."""
        return [float(t) for t in self.times[1:]]


# ------------ Spaces ------------


@dataclass
class DiscreteGeodesicSpace:
    n_vertices: int
    edges: List[Tuple[int, int]]
    lengths: np.ndarray          # shape (M+1, E): per-time edge lengths
    time_grid: TimeGrid
    coords: Optional[np.ndarray] = None   # optional vertex positions (for potentials, plots)
    name: str = "space"
    _dist: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _oracles: Dict[int, "PathOracle"] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.n_vertices < 1:
            raise ValueError("A space needs at least one vertex.")
        if self.lengths.shape != (self.time_grid.times.size, len(self.edges)):
            raise ValueError("lengths must have shape (number of times, number of edges).")
        if self.lengths.size and (not np.all(np.isfinite(self.lengths)) or np.any(self.lengths <= 0)):
            raise ValueError("Edge lengths must be finite and strictly positive.")
        for a, b in self.edges:
            if not (0 <= a < self.n_vertices and 0 <= b < self.n_vertices) or a == b:
                raise ValueError(f"Invalid edge ({a}, {b}).")

    # --- basic queries ---

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    def is_static(self) -> bool:
        return bool(np.allclose(self.lengths, self.lengths[0:1], rtol=0, atol=0))

    def graph(self, k: int) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.n_vertices))
        for e, (a, b) in enumerate(self.edges):
            length = float(self.lengths[k, e])
            # parallel edges: keep the shorter one
            if G.has_edge(a, b) and G[a][b]["length"] <= length:
                continue
            G.add_edge(a, b, length=length)
        return G

    def distance(self, t: float) -> np.ndarray:
        return self.distance_at_index(self.time_grid.index_of(t))

    def distance_at_index(self, k: int) -> np.ndarray:
        if k not in self._dist:
            G = self.graph(k)
            if not nx.is_connected(G):
                raise ValueError("disconnected graph")
            D = nx.floyd_warshall_numpy(G, nodelist=list(range(self.n_vertices)), weight="length")
            D = np.asarray(D, dtype=float)
            D = 0.5 * (D + D.T)
            np.fill_diagonal(D, 0.0)
            self._dist[k] = D
        return self._dist[k]

    def oracle(self, t: float, cap: Optional[int] = None) -> "PathOracle":
        k = self.time_grid.index_of(t)
        if cap is not None:
            return PathOracle(self, k, cap)
        if k not in self._oracles:
            self._oracles[k] = PathOracle(self, k, settings.path_cap)
        return self._oracles[k]

    def max_edge_length(self, t: Optional[float] = None) -> float:
        if not self.edges:
            return 0.0
        if t is None:
            return float(self.lengths.max())
        return float(self.lengths[self.time_grid.index_of(t)].max())

    def lengths_at(self, s: float) -> np.ndarray:
        """Edge lengths at an arbitrary time, linear in t between grid times (clamped outside)."""
        times = self.times
        if s < times[0] - 1e-12 or s > times[-1] + 1e-12:
            if not self.is_static():
                logger.warning("time %.6g outside grid [%.6g, %.6g]; clamping", s, times[0], times[-1])
        return np.array([np.interp(s, times, self.lengths[:, e]) for e in range(len(self.edges))])

    def with_lengths(self, lengths: np.ndarray, time_grid: Optional[TimeGrid] = None, name: Optional[str] = None):
        return DiscreteGeodesicSpace(
            n_vertices=self.n_vertices,
            edges=list(self.edges),
            lengths=lengths,
            time_grid=time_grid or self.time_grid,
            coords=self.coords,
            name=name or self.name,
        )

    def reverse_time(self) -> "DiscreteGeodesicSpace":
        """t -> d_{t0 + t1 - t} on the mirrored grid."""
        times = self.times
        mirrored = TimeGrid(times[0] + times[-1] - times[::-1])
        return self.with_lengths(self.lengths[::-1].copy(), mirrored, f"{self.name}-reversed")


def shortest_paths(space: DiscreteGeodesicSpace, t: float) -> Tuple[np.ndarray, "PathOracle"]:
    """All-pairs shortest-path distances at time t together with the path oracle."""
    return space.distance(t), space.oracle(t)


# ------------ Path oracle ------------


class PathOracle:
    """
    Enumerates shortest paths at one grid time by walking the shortest-path DAG:
    an edge (v, w) lies on a shortest x -> y path iff d(x,v) + l(v,w) + d(w,y) = d(x,y).
    Enumeration is depth first with neighbours in increasing index order, so the first
    path found is the lexicographically smallest one.
    """

    def __init__(self, space: DiscreteGeodesicSpace, k: int, cap: int):
        self.space = space
        self.k = k
        self.cap = cap
        self.D = space.distance_at_index(k)
        self._adj: List[List[Tuple[int, float]]] = [[] for _ in range(space.n_vertices)]
        G = space.graph(k)
        for v in range(space.n_vertices):
            self._adj[v] = sorted((int(w), float(G[v][w]["length"])) for w in G.neighbors(v))
        self.capped_pairs = 0

    def _tol(self, x: int, y: int) -> float:
        return settings.mesh_tolerance * max(1.0, float(self.D[x, y]))

    def _steps(self, x: int, v: int, y: int):
        D, tol = self.D, self._tol(x, y)
        for w, length in self._adj[v]:
            if abs(D[x, v] + length + D[w, y] - D[x, y]) <= tol:
                yield w

    def paths(self, x: int, y: int) -> Tuple[List[List[int]], bool]:
        """All shortest x -> y paths up to the cap, and whether the cap was hit."""
        if x == y:
            return [[x]], False
        found: List[List[int]] = []
        limit = self.cap + 1

        def walk(v: int, path: List[int]) -> bool:
            if v == y:
                found.append(list(path))
                return len(found) >= limit
            for w in self._steps(x, v, y):
                path.append(w)
                if walk(w, path):
                    return True
                path.pop()
            return False

        walk(x, [x])
        truncated = len(found) > self.cap
        if truncated:
            self.capped_pairs += 1
            logger.warning("path cap %d reached for pair (%d, %d)", self.cap, x, y)
            found = found[: self.cap]
        return found, truncated

    def canonical_path(self, x: int, y: int) -> List[int]:
        path = [x]
        v = x
        while v != y:
            v = next(self._steps(x, v, y))
            path.append(v)
        return path

    def path_by_index(self, x: int, y: int, index: int) -> List[int]:
        """The index-th enumerated path (modulo the number of paths)."""
        paths, _ = self.paths(x, y)
        return paths[index % len(paths)]


# ------------ Curves and geodesics ------------


@dataclass
class DiscreteCurve:
    params: np.ndarray
    points: List[int]
    time: float
    space: DiscreteGeodesicSpace = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.size < 2 or self.params.size != len(self.points):
            raise ValueError("A curve needs at least two parameters, one point each.")
        if np.any(np.diff(self.params) <= 0):
            raise ValueError("Curve parameters must be strictly increasing.")
        if self.params[0] < -1e-12 or self.params[-1] > 1 + 1e-12:
            raise ValueError("Curve parameters must lie in [0, 1].")

    def pair_distance(self, k: int) -> np.ndarray:
        """d_{t_k}(gamma^{tau_i}, gamma^{tau_j}) for all parameter pairs."""
        D = self.space.distance_at_index(k)
        idx = np.asarray(self.points)
        return D[np.ix_(idx, idx)]

    def point_at(self, tau: float) -> int:
        """Vertex at the parameter nearest to tau (first one on ties)."""
        return self.points[int(np.argmin(np.abs(self.params - tau)))]

    def restrict(self, i: int, j: int) -> "DiscreteCurve":
        """Sub-curve on params[i..j] keeping the original parametrization."""
        return DiscreteCurve(self.params[i:j + 1], self.points[i:j + 1], self.time, self.space)


class DiscreteGeodesic(DiscreteCurve):
    """A constant-speed vertex path; see from_path."""

    @classmethod
    def from_path(cls, space: DiscreteGeodesicSpace, path: Sequence[int], t: float) -> "DiscreteGeodesic":
        if len(path) == 1:
            return cls(np.array([0.0, 1.0]), [path[0], path[0]], t, space)
        D = space.distance(t)
        steps = np.array([D[a, b] for a, b in zip(path[:-1], path[1:])])
        arc = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(arc / arc[-1], list(path), t, space)

    @property
    def length(self) -> float:
        return float(self.space.distance(self.time)[self.points[0], self.points[-1]])

    def is_constant_speed(self, tol: Optional[float] = None) -> bool:
        tol = settings.mesh_tolerance if tol is None else tol
        D = self.space.distance(self.time)
        L = D[self.points[0], self.points[-1]]
        scale = max(1.0, L)
        for (a, b), dt in zip(zip(self.points[:-1], self.points[1:]), np.diff(self.params)):
            if abs(D[a, b] - dt * L) > tol * scale:
                return False
        total = sum(D[a, b] for a, b in zip(self.points[:-1], self.points[1:]))
        return abs(total - L) <= tol * scale


def enumerate_geodesics(space: DiscreteGeodesicSpace, t: float, x: int, y: int) -> Tuple[List[DiscreteGeodesic], bool]:
    paths, truncated = space.oracle(t).paths(x, y)
    return [DiscreteGeodesic.from_path(space, p, t) for p in paths], truncated


# ------------ Partition functionals ------------


def partition_extremum(params: np.ndarray, cost: Callable[[int, int], float], maximize: bool) -> float:
    """
    sup (maximize) or inf over all sub-partitions 0 = i_0 < ... < i_m = last of
    sum cost(i_{l-1}, i_l) / (params[i_l] - params[i_{l-1}]).
    """
    k = params.size
    best = np.full(k, -math.inf if maximize else math.inf)
    best[0] = 0.0
    for j in range(1, k):
        for i in range(j):
            val = best[i] + cost(i, j) / (params[j] - params[i])
            if (val > best[j]) if maximize else (val < best[j]):
                best[j] = val
    return float(best[-1])


def action(gamma: DiscreteCurve, t: Optional[float] = None) -> float:
    """Supremal partition sum of d_t^2 / dtau along the curve."""
    k = gamma.space.time_grid.index_of(gamma.time if t is None else t)
    D2 = gamma.pair_distance(k) ** 2
    return partition_extremum(gamma.params, lambda i, j: D2[i, j], maximize=True)


def infinitesimal_action(gamma: DiscreteCurve, t: Optional[float] = None) -> float:
    """Largest squared metric speed over consecutive parameter steps."""
    k = gamma.space.time_grid.index_of(gamma.time if t is None else t)
    D = gamma.pair_distance(k)
    speeds = [D[i, i + 1] / (gamma.params[i + 1] - gamma.params[i]) for i in range(gamma.params.size - 1)]
    return float(max(speeds) ** 2)


def left_difference_sq(space: DiscreteGeodesicSpace, t: float) -> np.ndarray:
    """Backward difference of d^2 at grid time t."""
    k = space.time_grid.index_of(t)
    if k == 0:
        raise ValueError("no left difference")
    dt = space.times[k] - space.times[k - 1]
    return (space.distance_at_index(k) ** 2 - space.distance_at_index(k - 1) ** 2) / dt


def right_difference_sq(space: DiscreteGeodesicSpace, t: float) -> np.ndarray:
    """Forward difference of d^2 at grid time t."""
    k = space.time_grid.index_of(t)
    if k == space.time_grid.M:
        raise ValueError("no right difference")
    dt = space.times[k + 1] - space.times[k]
    return (space.distance_at_index(k + 1) ** 2 - space.distance_at_index(k) ** 2) / dt


def strain(space: DiscreteGeodesicSpace, gamma: DiscreteCurve, t: Optional[float] = None) -> float:
    """Infimal partition sum of the backward difference of d^2 along the curve."""
    dD2 = left_difference_sq(space, gamma.time if t is None else t)
    idx = np.asarray(gamma.points)
    sub = dD2[np.ix_(idx, idx)]
    return partition_extremum(gamma.params, lambda i, j: sub[i, j], maximize=False)


# ------------ Log-Lipschitz controls ------------


@dataclass
class ControlEstimate:
    times: np.ndarray
    kappa: np.ndarray   # per interval (t_{k-1}, t_k]
    lam: np.ndarray

    def _interval(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        return max(k, 1) - 1

    def kappa_at(self, t: float) -> float:
        return float(self.kappa[self._interval(t)])

    def lambda_at(self, t: float) -> float:
        return float(self.lam[self._interval(t)])

    def integrated(self, s: float, t: float) -> Tuple[float, float]:
        """(int_s^t kappa, int_s^t lambda) for grid times s <= t."""
        i = int(np.argmin(np.abs(self.times - s)))
        j = int(np.argmin(np.abs(self.times - t)))
        dt = np.diff(self.times)[i:j]
        return float(np.sum(self.kappa[i:j] * dt)), float(np.sum(self.lam[i:j] * dt))


def estimate_controls(space: DiscreteGeodesicSpace) -> ControlEstimate:
    times = space.times
    n = space.n_vertices
    off = ~np.eye(n, dtype=bool)
    kappa = np.zeros(times.size - 1)
    lam = np.zeros(times.size - 1)
    for k in range(1, times.size):
        D1 = space.distance_at_index(k)[off]
        D0 = space.distance_at_index(k - 1)[off]
        if D1.size == 0:
            continue
        if np.any(D1 <= 0) or np.any(D0 <= 0):
            raise ValueError("pseudo-metric unsupported here")
        rate = (np.log(D1) - np.log(D0)) / (times[k] - times[k - 1])
        kappa[k - 1] = max(float(rate.max()), 0.0)
        lam[k - 1] = max(float(-rate.min()), 0.0)
    return ControlEstimate(times=times.copy(), kappa=kappa, lam=lam)
