# app/flows/gammacalc.py
"""
Finite-state Gamma calculus for time-dependent generators.

Quadratic forms are stored per state: Form(u)(x) = u^T A[x] u, so that
gamma_form(L)[x] gives the square field and gamma2_form(L)[x] its iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.integrate import simpson
from scipy.linalg import null_space

from app.errors import NumericalFailure
from app.flows.expressions import compile_time_function
from app.flows.tgs import TimeGrid
from app.settings import settings

logger = logging.getLogger(__name__)

RK4_STABILITY = 2.78
FORWARD_CONSTRAINT = "forward-neighbor differences"
NEIGHBOR_CONSTRAINT = "all-neighbor differences"


# ------------ Generator families ------------


@dataclass
class GeneratorFamily:
    time_grid: TimeGrid
    L: np.ndarray                                          # (M+1, n, n) on the grid
    markov: bool = True
    rate: Optional[Callable[[float], np.ndarray]] = field(default=None, repr=False)
    name: str = "generator"

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        M1 = self.time_grid.times.size
        if self.L.ndim != 3 or self.L.shape[0] != M1 or self.L.shape[1] != self.L.shape[2]:
            raise ValueError(f"L must have shape ({M1}, n, n).")
        rows = np.abs(self.L.sum(axis=2)).max()
        if rows > 1e-12 * max(1.0, float(np.abs(self.L).max())):
            raise ValueError("generator rows must sum to 0")
        if self.markov:
            off = self.L.copy()
            for k in range(M1):
                np.fill_diagonal(off[k], 0.0)
            if off.min() < 0:
                raise ValueError("markov generators need nonnegative off-diagonal rates")

    @property
    def n(self) -> int:
        return self.L.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    def at_index(self, k: int) -> np.ndarray:
        return self.L[k]

    def at(self, t: float) -> np.ndarray:
        """L_t between grid times: the exact rate when known, else linear interpolation."""
        if self.rate is not None:
            return np.asarray(self.rate(t), dtype=float)
        times = self.times
        k = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - w) * self.L[k] + w * self.L[k + 1]

    def derivative_at_index(self, k: int) -> Tuple[np.ndarray, int]:
        """d/dt L at grid index k; central inside, one-sided (order 1) at the ends."""
        times = self.times
        if 0 < k < times.size - 1:
            return (self.L[k + 1] - self.L[k - 1]) / (times[k + 1] - times[k - 1]), 2
        if k == 0:
            return (self.L[1] - self.L[0]) / (times[1] - times[0]), 1
        return (self.L[k] - self.L[k - 1]) / (times[k] - times[k - 1]), 1

    def end_derivative(self, k: int) -> Optional[np.ndarray]:
        """Three-point one-sided d/dt L at a grid end (order 2); None inside or on short grids."""
        times = self.times
        if times.size < 3 or 0 < k < times.size - 1:
            return None
        if k == 0:
            return np.gradient(self.L[:3], times[:3], axis=0, edge_order=2)[0]
        return np.gradient(self.L[-3:], times[-3:], axis=0, edge_order=2)[-1]

    @classmethod
    def from_rate(cls, rate: Callable[[float], np.ndarray], time_grid: TimeGrid, markov: bool = True, name: str = "generator"):
        L = np.array([rate(float(t)) for t in time_grid.times])
        return cls(time_grid, L, markov=markov, rate=rate, name=name)

    @classmethod
    def static(cls, L0: np.ndarray, time_grid: TimeGrid, markov: bool = True, name: str = "static"):
        L0 = np.asarray(L0, dtype=float)
        return cls.from_rate(lambda t: L0, time_grid, markov=markov, name=name)


def _scaled(L0: np.ndarray, scale: Union[None, str, Callable[[float], float]]) -> Callable[[float], np.ndarray]:
    if scale is None:
        return lambda t: L0
    c = compile_time_function(scale)[0] if isinstance(scale, str) else scale
    return lambda t: c(t) * L0


def circle_laplacian(n: int, time_grid: TimeGrid, scale=None) -> GeneratorFamily:
    """Finite-difference Laplacian on n equally spaced points of the unit circle, times c(t)."""
    if n < 3:
        raise ValueError("circle needs at least 3 points")
    h = 2 * math.pi / n
    L0 = (np.roll(np.eye(n), 1, axis=1) + np.roll(np.eye(n), -1, axis=1) - 2 * np.eye(n)) / h ** 2
    return GeneratorFamily.from_rate(_scaled(L0, scale), time_grid, name=f"circle-laplacian-{n}")


def interval_laplacian(n: int, time_grid: TimeGrid, scale=None) -> GeneratorFamily:
    """Reflecting finite-difference Laplacian on n points of [0, 1]."""
    if n < 2:
        raise ValueError("interval needs at least 2 points")
    h = 1.0 / (n - 1)
    L0 = np.zeros((n, n))
    for i in range(n - 1):
        L0[i, i + 1] = L0[i + 1, i] = 1.0 / h ** 2
    L0 -= np.diag(L0.sum(axis=1))
    return GeneratorFamily.from_rate(_scaled(L0, scale), time_grid, name=f"interval-laplacian-{n}")


def two_point(rate: float = 1.0) -> np.ndarray:
    return np.array([[-rate, rate], [rate, -rate]], dtype=float)


def random_markov_generator(n: int, rng: np.random.Generator, rates: Tuple[float, float] = (0.5, 1.5)) -> np.ndarray:
    """Complete graph with symmetric rates drawn uniformly from `rates`."""
    R = rng.uniform(rates[0], rates[1], size=(n, n))
    R = np.triu(R, 1)
    R = R + R.T
    return R - np.diag(R.sum(axis=1))


def exponential_family(L0: np.ndarray, time_grid: TimeGrid, growth: float, name: str = "exponential") -> GeneratorFamily:
    """L_t = exp(growth * t) L0."""
    L0 = np.asarray(L0, dtype=float)
    return GeneratorFamily.from_rate(lambda t: math.exp(growth * t) * L0, time_grid, name=name)


# ------------ Gamma and Gamma_2 ------------


def gamma(L: np.ndarray, u, v=None) -> np.ndarray:
    """Gamma(u, v) = 1/2 [L(uv) - u Lv - v Lu]."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    return 0.5 * (L @ (u * v) - u * (L @ v) - v * (L @ u))


def gamma2(L: np.ndarray, u, v=None) -> np.ndarray:
    """Gamma_2(u, v) = 1/2 [L Gamma(u, v) - Gamma(u, Lv) - Gamma(v, Lu)]."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    return 0.5 * (L @ gamma(L, u, v) - gamma(L, u, L @ v) - gamma(L, v, L @ u))


def gamma_form(L: np.ndarray) -> np.ndarray:
    """A[x] with Gamma(u, v)(x) = u^T A[x] v, by polarization of the defining formula."""
    n = L.shape[0]
    A = np.zeros((n, n, n))
    for x in range(n):
        A[x] = 0.5 * np.diag(L[x])
        A[x, x, :] -= 0.5 * L[x]
        A[x, :, x] -= 0.5 * L[x]
    return A


def gamma2_form(L: np.ndarray) -> np.ndarray:
    A = gamma_form(L)
    LA = np.einsum("xy,yij->xij", L, A)
    B = 0.5 * (LA - np.einsum("xik,kj->xij", A, L) - np.einsum("ki,xkj->xij", L, A))
    return 0.5 * (B + np.transpose(B, (0, 2, 1)))


def hessian_form(L: np.ndarray, u) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """H u(v, w) = 1/2 [Gamma(v, Gamma(u, w)) + Gamma(w, Gamma(u, v)) - Gamma(u, Gamma(v, w))]."""
    u = np.asarray(u, dtype=float)

    def H(v, w) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        return 0.5 * (gamma(L, v, gamma(L, u, w)) + gamma(L, w, gamma(L, u, v)) - gamma(L, u, gamma(L, v, w)))

    return H


# ------------ Ricci forms ------------


def forward_gradient_constraint(L: np.ndarray, x: int) -> np.ndarray:
    """One row e_y - e_x for the cyclically next neighbour y of x."""
    n = L.shape[0]
    nbrs = [y for y in range(n) if y != x and L[x, y] != 0]
    if not nbrs:
        return np.zeros((0, n))
    y = min(nbrs, key=lambda y: (y - x) % n)
    G = np.zeros((1, n))
    G[0, y], G[0, x] = 1.0, -1.0
    return G


def neighbor_gradient_constraint(L: np.ndarray, x: int) -> np.ndarray:
    n = L.shape[0]
    rows = []
    for y in range(n):
        if y != x and L[x, y] != 0:
            r = np.zeros(n)
            r[y], r[x] = 1.0, -1.0
            rows.append(r)
    return np.array(rows).reshape(len(rows), n)


CONSTRAINTS: Dict[str, Callable[[np.ndarray, int], np.ndarray]] = {
    FORWARD_CONSTRAINT: forward_gradient_constraint,
    NEIGHBOR_CONSTRAINT: neighbor_gradient_constraint,
}


@dataclass
class RicciValue:
    value: float
    unbounded: bool
    v: np.ndarray


def ricci_form(
    L: np.ndarray,
    u,
    x: int,
    gradient_constraint: Union[None, np.ndarray, Callable[[np.ndarray, int], np.ndarray]] = None,
    N: float = math.inf,
    B: Optional[np.ndarray] = None,
) -> RicciValue:
    """
    inf over v with G_x v = 0 of Gamma_2(u+v)(x) - (L(u+v)(x))^2 / N.
    The stationarity system Z^T M Z y = -Z^T M u is solved on the null space Z of G_x.
    """
    u = np.asarray(u, dtype=float)
    n = L.shape[0]
    if gradient_constraint is None:
        G = forward_gradient_constraint(L, x)
    elif callable(gradient_constraint):
        G = gradient_constraint(L, x)
    else:
        G = np.asarray(gradient_constraint, dtype=float).reshape(-1, n)
    Bx = gamma2_form(L)[x] if B is None else B[x]
    M = Bx if math.isinf(N) else Bx - np.outer(L[x], L[x]) / N
    Z = null_space(G) if G.shape[0] else np.eye(n)
    base = float(u @ M @ u)
    if Z.shape[1] == 0:
        return RicciValue(base, False, np.zeros(n))
    Q = Z.T @ M @ Z
    q = Z.T @ M @ u
    scale = max(1.0, float(np.abs(M).max()))
    eig = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if eig.min() < -1e-10 * scale:
        logger.warning("Ricci form unbounded below at state %d; reporting Gamma_2", x)
        return RicciValue(float(u @ Bx @ u), True, np.zeros(n))
    y, *_ = np.linalg.lstsq(Q, -q, rcond=None)
    if np.abs(Q @ y + q).max() > 1e-8 * scale * max(1.0, float(np.abs(u).max())):
        logger.warning("Ricci form unbounded below at state %d; reporting Gamma_2", x)
        return RicciValue(float(u @ Bx @ u), True, np.zeros(n))
    v = Z @ y
    w = u + v
    return RicciValue(float(w @ M @ w), False, v)


# ------------ Propagator ------------


@dataclass
class Propagator:
    """P[i, j] = P(t_i, t_j) for i <= j, solving d/dt P = L_t P with P(s, s) = I."""
    family: GeneratorFamily
    P: np.ndarray            # (M+1, M+1, n, n); NaN below the diagonal
    substeps: int

    def at(self, s: float, t: float) -> np.ndarray:
        i, j = self.family.time_grid.index_of(s), self.family.time_grid.index_of(t)
        return self.at_index(i, j)

    def at_index(self, i: int, j: int) -> np.ndarray:
        if i > j:
            raise ValueError("propagator needs s <= t")
        return self.P[i, j]

    def cocycle_residual(self) -> float:
        M1 = self.P.shape[0]
        worst = 0.0
        for i in range(M1):
            for r in range(i, M1):
                for j in range(r, M1):
                    worst = max(worst, float(np.abs(self.P[r, j] @ self.P[i, r] - self.P[i, j]).max()))
        return worst

    def backward_residual(self) -> float:
        """max |d/ds P(s, t) + P(s, t) L_s| by central differences in s."""
        times = self.family.times
        M1 = times.size
        worst = 0.0
        for j in range(M1):
            for i in range(1, j):
                dP = (self.P[i + 1, j] - self.P[i - 1, j]) / (times[i + 1] - times[i - 1])
                worst = max(worst, float(np.abs(dP + self.P[i, j] @ self.family.at_index(i)).max()))
        return worst


def _rk4_interval(fam: GeneratorFamily, X: np.ndarray, t0: float, t1: float, substeps: int) -> np.ndarray:
    h = (t1 - t0) / substeps
    t = t0
    for _ in range(substeps):
        k1 = fam.at(t) @ X
        k2 = fam.at(t + h / 2) @ (X + h / 2 * k1)
        k3 = fam.at(t + h / 2) @ (X + h / 2 * k2)
        k4 = fam.at(t + h) @ (X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return X


def build_propagator(fam: GeneratorFamily, substeps: Optional[int] = None) -> Propagator:
    substeps = substeps or settings.rk4_substeps
    times = fam.times
    M1, n = times.size, fam.n
    for k in range(M1 - 1):
        h = (times[k + 1] - times[k]) / substeps
        norm = max(np.abs(fam.at_index(k)).sum(axis=1).max(), np.abs(fam.at_index(k + 1)).sum(axis=1).max())
        if h * norm > RK4_STABILITY:
            needed = int(math.ceil((times[k + 1] - times[k]) * norm / RK4_STABILITY))
            raise NumericalFailure(
                f"step too large for stiffness on [{times[k]:.6g}, {times[k + 1]:.6g}]",
                suggestion=f"rk4_substeps >= {needed}",
            )
    P = np.full((M1, M1, n, n), np.nan)
    for i in range(M1):
        X = np.eye(n)
        P[i, i] = X
        for j in range(i + 1, M1):
            X = _rk4_interval(fam, X, float(times[j - 1]), float(times[j]), substeps)
            P[i, j] = X
    return Propagator(fam, P, substeps)


def propagate(fam: GeneratorFamily, s: float, t: float, substeps: Optional[int] = None) -> np.ndarray:
    i, j = fam.time_grid.index_of(s), fam.time_grid.index_of(t)
    if i > j:
        raise ValueError("propagator needs s <= t")
    X = np.eye(fam.n)
    substeps = substeps or settings.rk4_substeps
    for k in range(i + 1, j + 1):
        X = _rk4_interval(fam, X, float(fam.times[k - 1]), float(fam.times[k]), substeps)
    return X


# ------------ Verdicts ------------


class GammaSample(BaseModel):
    state: int
    function: int
    slack: float


class GammaVerdict(BaseModel):
    check: str
    holds: bool
    status: str
    t: Optional[float] = None
    s: Optional[float] = None
    N: Optional[float] = None
    min_slack: float
    tolerance: float
    witness: Optional[Dict[str, object]] = None
    samples: List[GammaSample] = []
    notes: List[str] = []


def _status(holds: bool) -> str:
    return "pass" if holds else "fail"


def _tol(tol: Optional[float]) -> float:
    return settings.default_tolerance if tol is None else tol


# ------------ Form criteria at one time ------------


def _form_check(
    fam: GeneratorFamily,
    t: float,
    check: str,
    build: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    tol: Optional[float],
    N: Optional[float] = None,
) -> GammaVerdict:
    tol = _tol(tol)
    k = fam.time_grid.index_of(t)
    L = fam.at_index(k)
    dL, order = fam.derivative_at_index(k)
    A, B = gamma_form(L), gamma2_form(L)

    def minimum(dA: np.ndarray) -> Tuple[float, Dict[str, object]]:
        best, witness = math.inf, None
        for x in range(fam.n):
            F = build(A[x], B[x], dA[x], L[x])
            w, vecs = np.linalg.eigh(0.5 * (F + F.T))
            if w[0] < best:
                best, witness = float(w[0]), {"state": x, "u": vecs[:, 0].tolist()}
        return best, witness

    best, witness = minimum(gamma_form(dL))
    notes: List[str] = []
    status = _status(best >= -tol)
    if order == 1:
        # Grid ends: the two one-sided differences bracket the O(h) error.
        alt = fam.end_derivative(k)
        notes.append("one-sided time difference (order 1) at a grid end")
        if alt is None:
            if status == "fail":
                status = "undetermined"
                notes.append("too few grid times to bound the end difference error")
        else:
            second, second_witness = minimum(gamma_form(alt))
            lo, hi = min(best, second), max(best, second)
            status = "pass" if lo >= -tol else "fail" if hi < -tol else "undetermined"
            if status == "undetermined":
                notes.append(f"slack {best:.6g} (order 1) and {second:.6g} (order 2) straddle the tolerance")
            if second < best:
                best, witness = second, second_witness
    holds = status == "pass"
    return GammaVerdict(
        check=check, holds=holds, status=status, t=float(t), N=N, min_slack=best,
        tolerance=tol, witness=None if holds else witness, notes=notes,
    )


def check_srf_gamma(fam: GeneratorFamily, t: float, tol: Optional[float] = None) -> GammaVerdict:
    """d/dt Gamma_t <= 2 Gamma_{2,t}: min eigenvalue of 2B_x - d/dt A_x over states."""
    return _form_check(fam, t, "super-ricci-gamma", lambda A, B, dA, l: 2 * B - dA, tol)


def check_sub_ricci_gamma(fam: GeneratorFamily, t: float, tol: Optional[float] = None) -> GammaVerdict:
    """Reversed criterion d/dt Gamma_t >= 2 Gamma_{2,t}."""
    return _form_check(fam, t, "sub-ricci-gamma", lambda A, B, dA, l: dA - 2 * B, tol)


def check_srf_N_gamma(fam: GeneratorFamily, t: float, N: float, tol: Optional[float] = None) -> GammaVerdict:
    """d/dt Gamma_t <= 2 Gamma_{2,t} - (2/N) (L_t u)^2."""
    if N <= 0:
        raise ValueError("N must be positive")
    if math.isinf(N):
        return check_srf_gamma(fam, t, tol).model_copy(update={"check": "super-N-ricci-gamma"})
    return _form_check(
        fam, t, "super-N-ricci-gamma", lambda A, B, dA, l: 2 * B - dA - 2.0 / N * np.outer(l, l), tol, N=N,
    )


# ------------ Gradient estimates ------------


def default_test_functions(n: int, seed: int = 0, count: int = 8) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [np.eye(n)[i] for i in range(n)] + [rng.standard_normal(n) for _ in range(count)]


def _require_markov(fam: GeneratorFamily) -> None:
    if not fam.markov:
        raise ValueError("gradient estimates need a markov (positivity preserving) family")


def _estimate(
    fam: GeneratorFamily,
    s: float,
    t: float,
    test_functions: Optional[Sequence],
    tol: Optional[float],
    prop: Optional[Propagator],
    check: str,
    slack_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    N: Optional[float] = None,
) -> GammaVerdict:
    _require_markov(fam)
    tol = _tol(tol)
    i, j = fam.time_grid.index_of(s), fam.time_grid.index_of(t)
    if i > j:
        raise ValueError("gradient estimate needs s <= t")
    us = [np.asarray(u, dtype=float) for u in (test_functions or default_test_functions(fam.n))]
    samples: List[GammaSample] = []
    witness = None
    best = math.inf
    for idx, u in enumerate(us):
        sl = slack_fn(u, np.array([i, j]))
        for x in range(fam.n):
            samples.append(GammaSample(state=x, function=idx, slack=float(sl[x])))
            if sl[x] < best:
                best = float(sl[x])
                witness = {"state": x, "function": idx, "u": u.tolist()}
    holds = best >= -tol
    return GammaVerdict(
        check=check, holds=holds, status=_status(holds), t=float(t), s=float(s), N=N, min_slack=best,
        tolerance=tol, witness=None if holds else witness, samples=samples,
    )


def check_gradient_estimate(
    fam: GeneratorFamily,
    s: float,
    t: float,
    test_functions: Optional[Sequence] = None,
    tol: Optional[float] = None,
    prop: Optional[Propagator] = None,
) -> GammaVerdict:
    """Gamma_t(P(s,t) u) <= P(s,t) Gamma_s(u)."""
    prop = prop or build_propagator(fam)

    def slack(u, ij):
        i, j = ij
        P = prop.at_index(i, j)
        return P @ gamma(fam.at_index(i), u) - gamma(fam.at_index(j), P @ u)

    return _estimate(fam, s, t, test_functions, tol, prop, "gradient-estimate", slack)


def check_reverse_gradient_estimate(
    fam: GeneratorFamily,
    s: float,
    t: float,
    test_functions: Optional[Sequence] = None,
    tol: Optional[float] = None,
    prop: Optional[Propagator] = None,
) -> GammaVerdict:
    """Gamma_t(P(s,t) u) >= P(s,t) Gamma_s(u)."""
    prop = prop or build_propagator(fam)

    def slack(u, ij):
        i, j = ij
        P = prop.at_index(i, j)
        return gamma(fam.at_index(j), P @ u) - P @ gamma(fam.at_index(i), u)

    return _estimate(fam, s, t, test_functions, tol, prop, "reverse-gradient-estimate", slack)


def n_estimate_integral(prop: Propagator, i: int, j: int, u) -> np.ndarray:
    """int_s^t (P(r,t) L_r P(s,r) u)^2 dr over the grid between indices i and j."""
    fam = prop.family
    u = np.asarray(u, dtype=float)
    if i == j:
        return np.zeros(fam.n)
    rs = fam.times[i: j + 1]
    vals = np.array([(prop.at_index(r, j) @ fam.at_index(r) @ prop.at_index(i, r) @ u) ** 2 for r in range(i, j + 1)])
    return simpson(vals, x=rs, axis=0)


def check_N_gradient_estimate(
    fam: GeneratorFamily,
    s: float,
    t: float,
    N: float,
    test_functions: Optional[Sequence] = None,
    tol: Optional[float] = None,
    prop: Optional[Propagator] = None,
) -> GammaVerdict:
    """Gamma_t(P u) + (2/N) int_s^t (P(r,t) L_r P(s,r) u)^2 dr <= P(s,t) Gamma_s(u)."""
    if N <= 0:
        raise ValueError("N must be positive")
    prop = prop or build_propagator(fam)
    if math.isinf(N):
        verdict = check_gradient_estimate(fam, s, t, test_functions, tol, prop)
        return verdict.model_copy(update={"check": "N-gradient-estimate"})

    def slack(u, ij):
        i, j = ij
        P = prop.at_index(i, j)
        base = P @ gamma(fam.at_index(i), u) - gamma(fam.at_index(j), P @ u)
        return base - 2.0 / N * n_estimate_integral(prop, i, j, u)

    return _estimate(fam, s, t, test_functions, tol, prop, "N-gradient-estimate", slack, N=N)


def gradient_estimate_forms(P: np.ndarray, Ls: np.ndarray, Lt: np.ndarray) -> np.ndarray:
    """Q[x] with (P Gamma_s(u) - Gamma_t(P u))(x) = u^T Q[x] u."""
    Q = np.einsum("xy,yab->xab", P, gamma_form(Ls)) - np.einsum("ca,xcd,db->xab", P, gamma_form(Lt), P)
    return 0.5 * (Q + Q.transpose(0, 2, 1))


def _worst_direction(Q: np.ndarray) -> Tuple[float, int, np.ndarray]:
    w, vecs = np.linalg.eigh(Q)
    x = int(np.argmin(w[:, 0]))
    return float(w[x, 0]), x, vecs[x][:, 0]


def find_gradient_estimate_witness(
    fam: GeneratorFamily,
    tol: Optional[float] = None,
    prop: Optional[Propagator] = None,
    refinements: int = 12,
) -> Optional[Dict[str, object]]:
    """
    Search (u, s, t) with Gamma_t(P(s,t) u) > P(s,t) Gamma_s(u).

    The slack is a quadratic form in u at each state, so the worst u for a pair (s, t)
    is the bottom eigenvector of that form. Every grid pair is scanned first. Then each
    grid time is searched over shrinking steps h/2^j, integrated with RK4 off the grid,
    where the slack is h/2^j times the Bochner form to first order.

    Returns a dict with status "fail" and the witness, status "undetermined" when some
    form slice does not pass but no witness turns up, or None when nothing is violated.
    """
    _require_markov(fam)
    tol = _tol(tol)
    prop = prop or build_propagator(fam)
    times = fam.times
    for i in range(times.size - 1):
        for j in range(i + 1, times.size):
            Q = gradient_estimate_forms(prop.at_index(i, j), fam.at_index(i), fam.at_index(j))
            slack, x, u = _worst_direction(Q)
            if slack < -tol:
                return {"status": "fail", "u": u.tolist(), "s": float(times[i]), "t": float(times[j]),
                        "state": x, "slack": slack, "on_grid": True}

    for k in range(times.size):
        forward = k < times.size - 1
        h = times[k + 1] - times[k] if forward else times[k] - times[k - 1]
        for level in range(1, refinements + 1):
            step = h / 2 ** level
            s, t = (times[k], times[k] + step) if forward else (times[k] - step, times[k])
            norm = max(np.abs(fam.at(float(s))).sum(axis=1).max(), np.abs(fam.at(float(t))).sum(axis=1).max())
            substeps = max(settings.rk4_substeps, int(math.ceil(step * norm)))
            P = _rk4_interval(fam, np.eye(fam.n), float(s), float(t), substeps)
            slack, x, u = _worst_direction(gradient_estimate_forms(P, fam.at(float(s)), fam.at(float(t))))
            if slack < -tol:
                return {"status": "fail", "u": u.tolist(), "s": float(s), "t": float(t),
                        "state": x, "slack": slack, "on_grid": False}

    violated = [float(t) for t in times if not check_srf_gamma(fam, float(t), tol).holds]
    if violated:
        logger.warning("%s: Bochner form fails at %d grid times without a gradient estimate witness",
                       fam.name, len(violated))
        return {"status": "undetermined", "violated_times": violated,
                "notes": ["form slices fail but no (u, s, t) breaks the gradient estimate"]}
    return None


def heat_identity_residual(prop: Propagator, s_index: int, r_index: int, t_index: int, u) -> float:
    """
    |d/dr [P(r,t) Gamma_r(P(s,r) u)] - P(r,t) [-2 Gamma_{2,r}(v) + d/dr Gamma_r(v)]|, v = P(s,r) u.
    Central differences in r; needs s < r < t on the grid.
    """
    fam = prop.family
    i, r, j = s_index, r_index, t_index
    if not (i < r < j):
        raise ValueError("need s < r < t")
    u = np.asarray(u, dtype=float)
    times = fam.times

    def outer(q: int) -> np.ndarray:
        return prop.at_index(q, j) @ gamma(fam.at_index(q), prop.at_index(i, q) @ u)

    lhs = (outer(r + 1) - outer(r - 1)) / (times[r + 1] - times[r - 1])
    v = prop.at_index(i, r) @ u
    dL, _ = fam.derivative_at_index(r)
    rhs = prop.at_index(r, j) @ (-2 * gamma2(fam.at_index(r), v) + gamma(dL, v))
    return float(np.abs(lhs - rhs).max())


# ------------ Weighted generators ------------


def weighted_generator(L0: np.ndarray, f) -> np.ndarray:
    """L = L0 - Gamma_0(., f)."""
    L0 = np.asarray(L0, dtype=float)
    f = np.asarray(f, dtype=float)
    A = gamma_form(L0)
    return L0 - np.einsum("xij,j->xi", A, f)


def weighted_family(base: GeneratorFamily, f: Callable[[float], np.ndarray], name: Optional[str] = None) -> GeneratorFamily:
    rate = lambda t: weighted_generator(base.at(t), f(t))
    return GeneratorFamily.from_rate(rate, base.time_grid, markov=base.markov, name=name or f"{base.name}-weighted")


def quadratic_weight_family(
    base: np.ndarray,
    coords: np.ndarray,
    time_grid: TimeGrid,
    psi: Callable[[float], float],
    dpsi: Callable[[float], float],
    center: Callable[[float], np.ndarray],
) -> GeneratorFamily:
    """L_t = psi_t (L0 - Gamma_0(., f_t)) with f_t = psi'_t |x - z_t|^2 / 2."""
    base = np.asarray(base, dtype=float)
    coords = np.asarray(coords, dtype=float).reshape(base.shape[0], -1)

    def rate(t: float) -> np.ndarray:
        f = 0.5 * dpsi(t) * np.sum((coords - np.asarray(center(t)).reshape(1, -1)) ** 2, axis=1)
        return psi(t) * weighted_generator(base, f)

    return GeneratorFamily.from_rate(rate, time_grid, name="quadratic-weight")


class WeightedIdentityReport(BaseModel):
    gamma_residual: float
    gamma2_residual: float
    threshold: float
    flagged: bool
    notes: List[str] = []


def check_weighted_identities(
    L0: np.ndarray,
    f,
    test_functions: Sequence,
    threshold: float,
    interior: Optional[Sequence[int]] = None,
) -> WeightedIdentityReport:
    """Residuals of Gamma_L = Gamma_0 and Gamma_{2,L} = Gamma_{2,0} + H f on the chosen states."""
    L0 = np.asarray(L0, dtype=float)
    f = np.asarray(f, dtype=float)
    L = weighted_generator(L0, f)
    idx = np.arange(L0.shape[0]) if interior is None else np.asarray(interior)
    g_res = g2_res = 0.0
    for u in test_functions:
        u = np.asarray(u, dtype=float)
        g_res = max(g_res, float(np.abs(gamma(L, u) - gamma(L0, u))[idx].max()))
        H = hessian_form(L0, f)
        g2_res = max(g2_res, float(np.abs(gamma2(L, u) - gamma2(L0, u) - H(u, u))[idx].max()))
    flagged = max(g_res, g2_res) > threshold
    notes = ["non-diffusion discretization"] if flagged else []
    return WeightedIdentityReport(
        gamma_residual=g_res, gamma2_residual=g2_res, threshold=threshold, flagged=flagged, notes=notes,
    )
