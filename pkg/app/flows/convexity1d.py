# app/flows/convexity1d.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import math

import numpy as np
from pydantic import BaseModel

from app.settings import settings


# ------------ Sampled functions on [0, 1] ------------


@dataclass(frozen=True)
class SampledFunction1D:
    grid: np.ndarray    # strictly increasing, grid[0] == 0, grid[-1] == 1
    values: np.ndarray  # u(grid[i]), finite

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length.")
        if grid.size < 2:
            raise ValueError("insufficient grid")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing.")
        if abs(grid[0]) > 1e-12 or abs(grid[-1] - 1.0) > 1e-12:
            raise ValueError("grid endpoints must be 0 and 1.")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite.")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, fn: Callable[[float], float], n: int = 11) -> "SampledFunction1D":
        grid = np.linspace(0.0, 1.0, n)
        return cls(grid, np.array([fn(float(x)) for x in grid]))

    @property
    def step(self) -> float:
        return float(np.max(np.diff(self.grid)))


class ConvexityVerdict(BaseModel):
    """
    Outcome of a one-dimensional convexity test.
    """
    holds: bool
    min_slack: float
    tolerance: float
    witness: Optional[List[float]] = None  # (a, b, c) for triples, stencil for differences
    checked: int = 0


# ------------ Convexity tests ------------


def is_k_convex(u: SampledFunction1D, K: float, tol: Optional[float] = None) -> ConvexityVerdict:
    """
    Triple inequality
        u(b) <= (c-b)/(c-a) u(a) + (b-a)/(c-a) u(c) - K/2 (c-b)(b-a)
    over all grid triples a < b < c. Slack is RHS - LHS.
    """
    g, v = u.grid, u.values
    n = g.size
    if n < 3:
        raise ValueError("insufficient grid")
    if tol is None:
        tol = settings.default_tolerance

    best = math.inf
    witness: Optional[List[float]] = None
    checked = 0
    for j in range(1, n - 1):
        a = g[:j][:, None]
        c = g[j + 1:][None, :]
        b = g[j]
        span = c - a
        rhs = (c - b) / span * v[:j][:, None] + (b - a) / span * v[j + 1:][None, :]
        rhs = rhs - 0.5 * K * (c - b) * (b - a)
        slack = rhs - v[j]
        checked += slack.size
        ia, ic = np.unravel_index(int(np.argmin(slack)), slack.shape)
        s = float(slack[ia, ic])
        if s < best:
            best = s
            witness = [float(g[ia]), float(b), float(g[j + 1 + ic])]

    return ConvexityVerdict(
        holds=best >= -tol, min_slack=best, tolerance=tol, witness=witness, checked=checked
    )


def _central_differences(grid: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # three-point formulas, exact on quadratics for any spacing
    h1 = grid[1:-1] - grid[:-2]
    h2 = grid[2:] - grid[1:-1]
    um, u0, up = values[:-2], values[1:-1], values[2:]
    d1 = (-h2 / (h1 * (h1 + h2))) * um + ((h2 - h1) / (h1 * h2)) * u0 + (h1 / (h2 * (h1 + h2))) * up
    d2 = 2.0 * (um / (h1 * (h1 + h2)) - u0 / (h1 * h2) + up / (h2 * (h1 + h2)))
    return d1, d2


def is_kn_convex(
    u: SampledFunction1D, K: float, N: float = math.inf, tol: Optional[float] = None
) -> ConvexityVerdict:
    """
    Differential (K, N)-convexity u'' >= K + (u')^2 / N at interior grid points.
    Nonuniform grids are allowed. Default tolerance is 10 h^2.
    """
    if u.grid.size < 4:
        raise ValueError("insufficient grid")
    if not N > 0:
        raise ValueError("N must be positive (or inf).")
    if tol is None:
        tol = 10.0 * u.step ** 2

    d1, d2 = _central_differences(u.grid, u.values)
    slack = d2 - K
    if math.isfinite(N):
        slack = slack - d1 ** 2 / N
    i = int(np.argmin(slack))
    best = float(slack[i])
    return ConvexityVerdict(
        holds=best >= -tol,
        min_slack=best,
        tolerance=tol,
        witness=[float(x) for x in u.grid[i:i + 3]],
        checked=int(slack.size),
    )


def is_midpoint_k_convex(u: SampledFunction1D, K: float, tol: Optional[float] = None) -> ConvexityVerdict:
    """
    Weak form u((a+c)/2) <= (u(a) + u(c))/2 - K/8 (c-a)^2 over grid pairs whose
    midpoint is itself a grid point.
    """
    if tol is None:
        tol = settings.default_tolerance
    g, v = u.grid, u.values
    best = math.inf
    witness: Optional[List[float]] = None
    checked = 0
    for i in range(g.size):
        for k in range(i + 2, g.size):
            mid = 0.5 * (g[i] + g[k])
            j = int(np.searchsorted(g, mid))
            if j >= g.size or abs(g[j] - mid) > 1e-12:
                continue
            s = 0.5 * (v[i] + v[k]) - 0.125 * K * (g[k] - g[i]) ** 2 - v[j]
            checked += 1
            if s < best:
                best, witness = float(s), [float(g[i]), float(g[j]), float(g[k])]
    if checked == 0:
        raise ValueError("insufficient grid")
    return ConvexityVerdict(holds=best >= -tol, min_slack=best, tolerance=tol, witness=witness, checked=checked)


def restrict(u: SampledFunction1D, a: float, b: float) -> SampledFunction1D:
    """
    Restriction of u to the grid points in [a, b], reparametrized to [0, 1].
    Restricting a K-convex u gives a K (b-a)^2-convex function.
    """
    if not 0.0 <= a < b <= 1.0:
        raise ValueError("need 0 <= a < b <= 1.")
    mask = (u.grid >= a - 1e-12) & (u.grid <= b + 1e-12)
    g = u.grid[mask]
    if g.size < 2 or abs(g[0] - a) > 1e-12 or abs(g[-1] - b) > 1e-12:
        raise ValueError("restriction endpoints must be grid points.")
    return SampledFunction1D((g - a) / (b - a), u.values[mask])


def along_geodesic_k(values, params, K: float, length_sq: float, tol: Optional[float] = None) -> ConvexityVerdict:
    """K-convexity of V along a geodesic of squared length d^2 is (K d^2)-convexity in tau."""
    return is_k_convex(SampledFunction1D(np.asarray(params), np.asarray(values)), K * length_sq, tol)


# ------------ Scalar special functions ------------


def green_chi(tau: float, sigma: float) -> float:
    """Green function of -d^2/dsigma^2 on [0,1]: min{sigma(1-tau), tau(1-sigma)}."""
    if not (0.0 <= tau <= 1.0 and 0.0 <= sigma <= 1.0):
        raise ValueError("tau and sigma must lie in [0, 1].")
    return min(sigma * (1.0 - tau), tau * (1.0 - sigma))


def lambda_weight(tau: float, sigma: float) -> float:
    if not 0.0 < tau <= 0.5:
        raise ValueError("lambda_weight needs tau in (0, 1/2].")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1].")
    return (green_chi(tau, sigma) + green_chi(1.0 - tau, sigma)) / tau


def phi_N(u: float, Nprime: float) -> float:
    if not Nprime > 0:
        raise ValueError("N' must be positive (or inf).")
    if math.isinf(Nprime):
        return u
    return u + u * u / Nprime


def phi_monotonicity_floor(Nprime: float) -> float:
    """phi_N(., N') is nondecreasing on [-N'/2, inf)."""
    if not Nprime > 0:
        raise ValueError("N' must be positive (or inf).")
    return -math.inf if math.isinf(Nprime) else -0.5 * Nprime
