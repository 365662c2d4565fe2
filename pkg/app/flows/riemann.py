# app/flows/riemann.py
"""
Tensor-level checks on time-dependent weighted Riemannian charts (dimension <= 3).

Quadratic-form inequalities A >= 0 (or <= 0) are decided by the generalized eigenvalues
of (A, g_t), sampled over a grid of chart points and the family's grid times.
Curvature comes in closed form for registered model metrics and from fourth-order
central differences otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import itertools
import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.integrate import cumulative_trapezoid, quad, solve_ivp, trapezoid
from scipy.linalg import eigh

from app.flows.expressions import ScalarField, compile_matrix, compile_scalar, compile_time_function
from app.flows.model_metrics import ModelMetric
from app.flows.tgs import TimeGrid
from app.settings import settings

logger = logging.getLogger(__name__)

Point = np.ndarray


# ------------ Finite differences ------------


def _partial(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, axis: int, h: float):
    e = np.zeros_like(x)
    e[axis] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def _fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    return np.array([_partial(fn, x, a, h) for a in range(x.size)])


def _fd_hessian(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    n = x.size
    H = np.zeros((n, n))
    f0 = fn(x)
    for a in range(n):
        e = np.zeros(n)
        e[a] = h
        H[a, a] = (-fn(x + 2 * e) + 16 * fn(x + e) - 30 * f0 + 16 * fn(x - e) - fn(x - 2 * e)) / (12 * h * h)
        for b in range(a + 1, n):
            d = np.zeros(n)
            d[b] = h
            H[a, b] = H[b, a] = (fn(x + e + d) - fn(x + e - d) - fn(x - e + d) + fn(x - e - d)) / (4 * h * h)
    return H


def christoffel_fd(metric_at: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    """Gamma^m_ij = 1/2 g^{ml} (d_i g_lj + d_j g_li - d_l g_ij); returned as [m, i, j]."""
    n = x.size
    dg = np.array([_partial(metric_at, x, k, h) for k in range(n)])      # [k, i, j] = d_k g_ij
    ginv = np.linalg.inv(metric_at(x))
    A = np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg
    return 0.5 * np.einsum("ml,lij->mij", ginv, A)


def ricci_from_christoffel(gamma_at: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    """R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kp G^p_ij - G^k_jp G^p_ik."""
    G = gamma_at(x)
    dG = np.array([_partial(gamma_at, x, a, h) for a in range(x.size)])  # [a, k, i, j]
    R = (
        np.einsum("kkij->ij", dG)
        - np.einsum("jkik->ij", dG)
        + np.einsum("kkp,pij->ij", G, G)
        - np.einsum("kjp,pik->ij", G, G)
    )
    return 0.5 * (R + R.T)


# ------------ Scalar functions on charts ------------


@dataclass
class ChartPotential:
    """V(t, x) on a chart; partials are exact for expressions, finite differences otherwise."""
    value: Callable[[float, np.ndarray], float]
    name: str = "V"
    field_: Optional[ScalarField] = field(default=None, repr=False)

    def __call__(self, t: float, x) -> float:
        return float(self.value(t, np.asarray(x, dtype=float)))

    def grad(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.field_ is not None:
            return self.field_.grad(t, x)
        return _fd_gradient(lambda y: self.value(t, y), x, settings.fd_space_step)

    def hess(self, t: float, x) -> np.ndarray:
        """Euclidean second partials."""
        x = np.asarray(x, dtype=float)
        if self.field_ is not None:
            return self.field_.hess(t, x)
        return _fd_hessian(lambda y: self.value(t, y), x, settings.fd_space_step)

    @classmethod
    def from_expression(cls, text: str, dim: int) -> "ChartPotential":
        f = compile_scalar(text, dim)
        return cls(f.value, name=text, field_=f)

    @classmethod
    def quadratic(cls, coeff: float, center: Sequence[float]) -> "ChartPotential":
        c = np.asarray(center, dtype=float)
        return cls(lambda t, x: 0.5 * coeff * float(np.sum((x - c) ** 2)), name=f"quadratic({coeff:g})")

    @classmethod
    def zero(cls) -> "ChartPotential":
        return cls(lambda t, x: 0.0, name="0")

    def reversed(self, t0: float, t1: float) -> "ChartPotential":
        base = self
        return ChartPotential(lambda t, x: base.value(t0 + t1 - t, x), name=f"{self.name}-reversed",
                              field_=None if base.field_ is None else _reversed_field(base.field_, t0, t1))


def _reversed_field(f: ScalarField, t0: float, t1: float) -> ScalarField:
    return ScalarField(
        expr=f.expr,
        dim=f.dim,
        value=lambda t, x: f.value(t0 + t1 - t, x),
        _grad=[(lambda t, x, g=g: g(t0 + t1 - t, x)) for g in f._grad],
        _hess=[[(lambda t, x, h=h: h(t0 + t1 - t, x)) for h in row] for row in f._hess],
        _dt=lambda t, x: -f._dt(t0 + t1 - t, x),
    )


# ------------ Families ------------


@dataclass
class RiemannianFamily:
    dim: int
    box: List[Tuple[float, float]]
    metric: Callable[[float, np.ndarray], np.ndarray]
    time_grid: TimeGrid
    weight: ChartPotential = field(default_factory=ChartPotential.zero)
    metric_dt: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    model: Optional[ModelMetric] = None
    scale: Optional[Callable[[float], float]] = None       # conformal factor c(t) over the model
    scale_dt: Optional[Callable[[float], float]] = None
    name: str = "chart"

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError("charts have dimension 1, 2 or 3")
        if len(self.box) != self.dim or any(lo >= hi for lo, hi in self.box):
            raise ValueError("box needs one (lo, hi) interval per coordinate")

    # --- constructors ---

    @classmethod
    def conformal(
        cls,
        model: ModelMetric,
        time_grid: TimeGrid,
        scale: Union[None, str, Callable[[float], float]] = None,
        scale_dt: Optional[Callable[[float], float]] = None,
        weight: Optional[ChartPotential] = None,
        box: Optional[List[Tuple[float, float]]] = None,
        name: Optional[str] = None,
    ) -> "RiemannianFamily":
        """g_t = c(t) g_model; c is an expression in t, a callable (with its derivative) or constant 1."""
        if scale is None:
            c, dc = (lambda t: 1.0), (lambda t: 0.0)
        elif isinstance(scale, str):
            c, dc = compile_time_function(scale)
        else:
            if scale_dt is None:
                raise ValueError("a callable scale needs its time derivative")
            c, dc = scale, scale_dt
        return cls(
            dim=model.dim,
            box=list(box or model.box),
            metric=lambda t, x: c(t) * model.metric(x),
            metric_dt=lambda t, x: dc(t) * model.metric(x),
            time_grid=time_grid,
            weight=weight or ChartPotential.zero(),
            model=model,
            scale=c,
            scale_dt=dc,
            name=name or model.name,
        )

    @classmethod
    def from_expressions(
        cls,
        metric: Sequence[Sequence[str]],
        box: List[Tuple[float, float]],
        time_grid: TimeGrid,
        weight: Optional[str] = None,
        name: str = "chart",
    ) -> "RiemannianFamily":
        dim = len(metric)
        g = compile_matrix(metric, dim)
        return cls(
            dim=dim,
            box=list(box),
            metric=g,
            metric_dt=g.dt,
            time_grid=time_grid,
            weight=ChartPotential.from_expression(weight, dim) if weight else ChartPotential.zero(),
            name=name,
        )

    # --- pointwise data ---

    def g(self, t: float, x) -> np.ndarray:
        G = np.asarray(self.metric(t, np.asarray(x, dtype=float)), dtype=float)
        G = 0.5 * (G + G.T)
        if np.linalg.eigvalsh(G).min() <= 0:
            raise ValueError(f"metric not positive definite at t={t:g}, x={list(np.round(x, 6))}")
        return G

    def dg_dt(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.metric_dt is not None:
            return np.asarray(self.metric_dt(t, x), dtype=float)
        h = settings.fd_time_step
        return (self.metric(t + h, x) - self.metric(t - h, x)) / (2 * h)

    def is_conformal(self) -> bool:
        return self.model is not None and self.scale is not None

    def sample_points(self, per_axis: int = 5) -> List[np.ndarray]:
        margin = 4 * settings.fd_space_step
        axes = [np.linspace(lo + margin, hi - margin, per_axis) for lo, hi in self.box]
        return [np.array(p) for p in itertools.product(*axes)]

    def inside(self, x, margin: float = 0.0) -> bool:
        return all(lo + margin <= xi <= hi - margin for xi, (lo, hi) in zip(x, self.box))

    # --- distances and geodesics ---

    def distance(self, t: float, x, y) -> float:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if self.model is not None:
            c = self.scale(t) if self.scale is not None else 1.0
            return math.sqrt(c) * self.model.distance(x, y)
        if self.dim == 1:
            val, _ = quad(lambda s: math.sqrt(self.g(t, [s])[0, 0]), float(x[0]), float(y[0]))
            return abs(val)
        raise ValueError("chart distance needs a registered model metric or a 1-D chart")

    def geodesic(self, t: float, x, y, b: float) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if self.model is not None:
            if self.model.geodesic is None:
                raise ValueError(f"no geodesic interpolation for model '{self.model.name}'")
            return self.model.geodesic(x, y, b)
        if self.dim == 1:
            s = np.linspace(x[0], y[0], 401)
            arc = cumulative_trapezoid([math.sqrt(self.g(t, [v])[0, 0]) for v in s], s, initial=0.0)
            return np.array([np.interp(b * arc[-1], arc, s) if arc[-1] > 0 else np.interp(-b * abs(arc[-1]), -np.abs(arc), s)])
        raise ValueError("chart geodesics need a registered model metric or a 1-D chart")


def reverse_family(fam: RiemannianFamily) -> RiemannianFamily:
    """t -> t0 + t1 - t on the mirrored grid."""
    times = fam.time_grid.times
    t0, t1 = float(times[0]), float(times[-1])
    mirror = TimeGrid(t0 + t1 - times[::-1])
    scale = scale_dt = None
    if fam.scale is not None:
        scale = lambda t: fam.scale(t0 + t1 - t)
        scale_dt = lambda t: -fam.scale_dt(t0 + t1 - t)
    return RiemannianFamily(
        dim=fam.dim,
        box=list(fam.box),
        metric=lambda t, x: fam.metric(t0 + t1 - t, x),
        metric_dt=lambda t, x: -fam.dg_dt(t0 + t1 - t, x),
        time_grid=mirror,
        weight=fam.weight.reversed(t0, t1),
        model=fam.model,
        scale=scale,
        scale_dt=scale_dt,
        name=f"{fam.name}-reversed",
    )


# ------------ Curvature ------------


@dataclass
class CurvatureOps:
    christoffel: np.ndarray
    ricci: np.ndarray
    hess_f: np.ndarray
    dg_dt: np.ndarray
    grad_f: np.ndarray


def _covariant_hessian(partials: np.ndarray, grad: np.ndarray, christoffel: np.ndarray) -> np.ndarray:
    H = partials - np.einsum("kij,k->ij", christoffel, grad)
    return 0.5 * (H + H.T)


def curvature_ops(fam: RiemannianFamily, t: float, x, use_model: bool = True) -> CurvatureOps:
    """Christoffel symbols, Ricci tensor, Hess f~ and d/dt g at (t, x)."""
    x = np.asarray(x, dtype=float)
    h = settings.fd_space_step
    if fam.model is not None and use_model:
        G = fam.model.christoffel(x)
        Ric = fam.model.ricci(x)
    else:
        if not fam.inside(x, margin=4 * h):
            raise ValueError("stencil outside chart")
        metric_at = lambda y: np.asarray(fam.metric(t, y), dtype=float)
        gamma_at = lambda y: christoffel_fd(metric_at, y, h)
        G = gamma_at(x)
        Ric = ricci_from_christoffel(gamma_at, x, h)
    grad_f = fam.weight.grad(t, x)
    return CurvatureOps(
        christoffel=G,
        ricci=Ric,
        hess_f=_covariant_hessian(fam.weight.hess(t, x), grad_f, G),
        dg_dt=fam.dg_dt(t, x),
        grad_f=grad_f,
    )


# ------------ Tensor verdicts ------------


class TensorVerdict(BaseModel):
    form: str
    holds: bool
    extreme_eigenvalue: float
    bound: str                       # "min" for >= forms, "max" for <= forms
    tolerance: float
    samples: int
    witness: Optional[Dict[str, object]] = None
    notes: List[str] = []


def _scan(
    fam: RiemannianFamily,
    form: str,
    builder: Callable[[float, np.ndarray], np.ndarray],
    bound: str,
    tol: float,
    times: Optional[Sequence[float]] = None,
    per_axis: int = 5,
) -> TensorVerdict:
    times = fam.time_grid.times if times is None else times
    best = math.inf if bound == "min" else -math.inf
    witness: Optional[Dict[str, object]] = None
    count = 0
    for t in times:
        for x in fam.sample_points(per_axis):
            A = builder(float(t), x)
            w, vecs = eigh(0.5 * (A + A.T), fam.g(float(t), x))
            k = 0 if bound == "min" else -1
            count += 1
            if (w[k] < best) if bound == "min" else (w[k] > best):
                best = float(w[k])
                witness = {"t": float(t), "x": x.tolist(), "eigenvector": vecs[:, k].tolist()}
    holds = best >= -tol if bound == "min" else best <= tol
    return TensorVerdict(
        form=form, holds=holds, extreme_eigenvalue=best, bound=bound, tolerance=tol, samples=count,
        witness=None if holds else witness,
    )


def _tol(tol: Optional[float]) -> float:
    return settings.default_tolerance if tol is None else tol


def _srf_form(fam: RiemannianFamily, t: float, x: np.ndarray, sign: float = 1.0) -> np.ndarray:
    ops = curvature_ops(fam, t, x)
    return ops.ricci + ops.hess_f + sign * 0.5 * ops.dg_dt


def check_srf_tensor(fam: RiemannianFamily, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Ric + Hess f~ >= -1/2 d/dt g."""
    return _scan(fam, "super-ricci", lambda t, x: _srf_form(fam, t, x), "min", _tol(tol), per_axis=per_axis)


def check_sub_rf_tensor(fam: RiemannianFamily, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Ric + Hess f~ <= -1/2 d/dt g."""
    return _scan(fam, "sub-ricci", lambda t, x: _srf_form(fam, t, x), "max", _tol(tol), per_axis=per_axis)


def check_ricci_flow_tensor(fam: RiemannianFamily, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Both inequalities at once: |Ric + Hess f~ + 1/2 d/dt g| <= 2 tol."""
    tol = _tol(tol)
    lower = check_srf_tensor(fam, tol, per_axis)
    upper = check_sub_rf_tensor(fam, tol, per_axis)
    size = max(abs(lower.extreme_eigenvalue), abs(upper.extreme_eigenvalue))
    holds = lower.holds and upper.holds and size <= 2 * tol
    return TensorVerdict(
        form="ricci-flow", holds=holds, extreme_eigenvalue=size, bound="max", tolerance=2 * tol,
        samples=lower.samples, witness=None if holds else (lower.witness or upper.witness),
    )


def check_N_srf_tensor(fam: RiemannianFamily, N: float, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Ric + Hess f~ - df~ (x) df~ / (N - n) >= -1/2 d/dt g; N = n forces a constant weight."""
    tol = _tol(tol)
    n = fam.dim
    if N < n:
        raise ValueError(f"N must be at least the dimension {n}")
    if math.isinf(N):
        verdict = check_srf_tensor(fam, tol, per_axis)
        return verdict.model_copy(update={"form": "super-N-ricci"})
    if N == n:
        for t in fam.time_grid.times:
            for x in fam.sample_points(per_axis):
                grad = fam.weight.grad(float(t), x)
                if np.linalg.norm(grad) > tol:
                    return TensorVerdict(
                        form="super-N-ricci", holds=False, extreme_eigenvalue=-math.inf, bound="min",
                        tolerance=tol, samples=0,
                        witness={"t": float(t), "x": x.tolist(), "reason": "weight not constant"},
                    )
        verdict = check_srf_tensor(fam, tol, per_axis)
        return verdict.model_copy(update={"form": "super-N-ricci"})

    def builder(t: float, x: np.ndarray) -> np.ndarray:
        ops = curvature_ops(fam, t, x)
        return ops.ricci + ops.hess_f - np.outer(ops.grad_f, ops.grad_f) / (N - n) + 0.5 * ops.dg_dt

    return _scan(fam, "super-N-ricci", builder, "min", tol, per_axis=per_axis)


def check_upper_ricci_tensor(fam: RiemannianFamily, K: float, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Static upper bound Ric + Hess f~ <= K g on every slice."""
    def builder(t: float, x: np.ndarray) -> np.ndarray:
        ops = curvature_ops(fam, t, x)
        return ops.ricci + ops.hess_f - K * fam.g(t, x)

    return _scan(fam, "upper-ricci", builder, "max", _tol(tol), per_axis=per_axis)


def _potential_form(fam: RiemannianFamily, V: ChartPotential, t: float, x: np.ndarray, sign: float) -> np.ndarray:
    G = fam.model.christoffel(x) if fam.model is not None else christoffel_fd(
        lambda y: np.asarray(fam.metric(t, y), dtype=float), x, settings.fd_space_step)
    return _covariant_hessian(V.hess(t, x), V.grad(t, x), G) + sign * 0.5 * fam.dg_dt(t, x)


def check_dynamic_convexity_tensor(fam: RiemannianFamily, V: ChartPotential, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Hess_t V_t >= -1/2 d/dt g."""
    return _scan(fam, "dynamic-convexity", lambda t, x: _potential_form(fam, V, t, x, 1.0), "min", _tol(tol), per_axis=per_axis)


def check_backward_dynamic_convexity(fam: RiemannianFamily, V: ChartPotential, tol: Optional[float] = None, per_axis: int = 5) -> TensorVerdict:
    """Hess_t V_t >= 1/2 d/dt g; the same as forward convexity of the time-reversed family."""
    return _scan(fam, "backward-dynamic-convexity", lambda t, x: _potential_form(fam, V, t, x, -1.0), "min", _tol(tol), per_axis=per_axis)


# ------------ Weight evolution ------------


class WeightIdentityReport(BaseModel):
    holds: bool
    max_residual: float
    tolerance: float
    samples: int
    witness: Optional[Dict[str, object]] = None


def check_weight_identity(fam: RiemannianFamily, tol: Optional[float] = None, per_axis: int = 5) -> WeightIdentityReport:
    """
    f^_t = -1/2 log det(g_t g_0^{-1}) satisfies d/dt f^ = -1/2 tr_{g_t} d/dt g.
    d/dt f^ is a central difference; the right side uses d/dt g of the family.
    """
    tol = _tol(tol) if tol is not None else max(settings.default_tolerance, 10 * settings.fd_time_step ** 2)
    times = fam.time_grid.times
    t0 = float(times[0])
    h = settings.fd_time_step

    def fhat(t: float, x: np.ndarray) -> float:
        _, logdet = np.linalg.slogdet(np.asarray(fam.metric(t, x), dtype=float) @ np.linalg.inv(fam.g(t0, x)))
        return -0.5 * logdet

    worst, witness, count = 0.0, None, 0
    for t in times:
        for x in fam.sample_points(per_axis):
            lhs = (fhat(float(t) + h, x) - fhat(float(t) - h, x)) / (2 * h)
            rhs = -0.5 * float(np.trace(np.linalg.solve(fam.g(float(t), x), fam.dg_dt(float(t), x))))
            r = abs(lhs - rhs)
            count += 1
            if r > worst:
                worst, witness = r, {"t": float(t), "x": x.tolist(), "dfhat": lhs, "half_trace": -rhs}
    holds = worst <= tol
    return WeightIdentityReport(holds=holds, max_residual=worst, tolerance=tol, samples=count, witness=None if holds else witness)


# ------------ Gradient flows ------------


@dataclass
class ChartTrajectory:
    times: np.ndarray
    points: np.ndarray        # (k, n)
    velocities: np.ndarray    # (k, n)
    truncated: bool = False


def gradient_flow(
    fam: RiemannianFamily,
    V: ChartPotential,
    terminal: Tuple[float, Sequence[float]],
    start: Optional[float] = None,
    dt: Optional[float] = None,
) -> ChartTrajectory:
    """Backward integration of x' = g_t^{-1} grad V_t(x) from x_T = x'; stops at the chart boundary."""
    T, xT = float(terminal[0]), np.asarray(terminal[1], dtype=float)
    if xT.size != fam.dim or not fam.inside(xT, margin=1e-12):
        raise ValueError("terminal point must be interior to the chart")
    start = float(fam.time_grid.times[0]) if start is None else float(start)
    if start >= T:
        raise ValueError("start must precede the terminal time")
    dt = settings.ode_step if dt is None else dt
    steps = max(1, int(math.ceil((T - start) / dt - 1e-9)))
    grid = np.linspace(start, T, steps + 1)

    def rhs(t, x):
        return np.linalg.solve(fam.g(t, x), V.grad(t, x))

    def boundary(t, x):
        return min(min(xi - lo, hi - xi) for xi, (lo, hi) in zip(x, fam.box))

    boundary.terminal = True
    sol = solve_ivp(
        rhs, (T, start), xT, method="RK45", t_eval=grid[::-1], events=boundary,
        rtol=1e-10, atol=1e-12, max_step=dt,
    )
    if sol.status == -1:
        raise RuntimeError(f"gradient flow integration failed: {sol.message}")
    times = sol.t[::-1]
    points = sol.y.T[::-1]
    truncated = sol.status == 1
    if truncated:
        logger.warning("gradient flow left the chart; trajectory truncated at t=%.6g", times[0])
    velocities = np.array([rhs(t, x) for t, x in zip(times, points)])
    return ChartTrajectory(times=np.asarray(times), points=np.asarray(points), velocities=velocities, truncated=truncated)


class ExpansionVerdict(BaseModel):
    holds: bool
    times: List[float]
    distances: List[float]
    min_increment: float
    tolerance: float
    witness_index: Optional[int] = None
    notes: List[str] = []


def check_distance_expansion(
    fam: RiemannianFamily,
    V: ChartPotential,
    x_terminal: Sequence[float],
    y_terminal: Sequence[float],
    T: Optional[float] = None,
    start: Optional[float] = None,
    dt: Optional[float] = None,
    tol: Optional[float] = None,
) -> ExpansionVerdict:
    """d_t(x_t, y_t) is nondecreasing along two gradient flows of the same V."""
    tol = _tol(tol)
    T = float(fam.time_grid.times[-1]) if T is None else T
    a = gradient_flow(fam, V, (T, x_terminal), start, dt)
    b = gradient_flow(fam, V, (T, y_terminal), start, dt)
    k = min(a.times.size, b.times.size)
    times = a.times[-k:]
    dists = [fam.distance(float(t), p, q) for t, p, q in zip(times, a.points[-k:], b.points[-k:])]
    inc = np.diff(dists) if k > 1 else np.zeros(0)
    min_inc = float(inc.min()) if inc.size else 0.0
    holds = min_inc >= -tol
    notes = ["trajectory truncated at the chart boundary"] if (a.truncated or b.truncated) else []
    return ExpansionVerdict(
        holds=holds, times=[float(t) for t in times], distances=[float(d) for d in dists], min_increment=min_inc,
        tolerance=tol, witness_index=None if holds else int(np.argmin(inc)) + 1, notes=notes,
    )


# ------------ EVI on charts ------------


class ChartEviSlack(BaseModel):
    t: float
    z: List[float]
    slack: float


class ChartEviReport(BaseModel):
    N: Optional[float] = None
    holds: bool
    min_slack: float
    tolerance: float
    slacks: List[ChartEviSlack] = []
    witness: Optional[ChartEviSlack] = None


def _bzero_chart(fam: RiemannianFamily, t: float, x: np.ndarray, z: np.ndarray, L: float) -> float:
    """int_0^1 strain of the geodesic x -> z restricted to [0, s] ds."""
    if fam.is_conformal():
        return 0.5 * fam.scale_dt(t) / fam.scale(t) * L * L
    if fam.dim == 1:
        bs = np.linspace(0.0, 1.0, settings.sigma_nodes)
        vals = []
        for b in bs:
            p = fam.geodesic(t, x, z, float(b))
            vals.append((1 - b) * fam.dg_dt(t, p)[0, 0] / fam.g(t, p)[0, 0])
        return L * L * float(trapezoid(np.array(vals), bs))
    raise ValueError("strain of chart geodesics needs a conformal model family or a 1-D chart")


def check_evi_chart(
    fam: RiemannianFamily,
    V: ChartPotential,
    trajectory: ChartTrajectory,
    z_points: Sequence[Sequence[float]],
    tol: Optional[float] = None,
    N: float = math.inf,
) -> ChartEviReport:
    """
    1/2 d/ds d_t^2(x_s, z)|s=t + 1/2 b0_t(gamma) - V_t(x_t) + V_t(z) [- 1/N int (1-b)(d_b V(gamma^b))^2 db] >= 0,
    the s-derivative from the first variation formula with the recorded velocity.
    """
    tol = _tol(tol)
    h = settings.fd_space_step
    inv_n = 0.0 if math.isinf(N) else 1.0 / N
    out: List[ChartEviSlack] = []
    for t, x, v in zip(trajectory.times[1:], trajectory.points[1:], trajectory.velocities[1:]):
        t = float(t)
        for z in z_points:
            z = np.asarray(z, dtype=float)
            L = fam.distance(t, x, z)
            half_sq = lambda y: 0.5 * fam.distance(t, y, z) ** 2
            grad = np.array([
                (half_sq(x + h * e) - half_sq(x - h * e)) / (2 * h) for e in np.eye(fam.dim)
            ])
            slack = float(v @ grad) - V(t, x) + V(t, z)
            if L > 0:
                slack += 0.5 * _bzero_chart(fam, t, x, z, L)
                if inv_n:
                    bs = np.linspace(0.0, 1.0, settings.sigma_nodes)
                    vals = np.array([V(t, fam.geodesic(t, x, z, float(b))) for b in bs])
                    dv = np.gradient(vals, bs)
                    slack -= inv_n * float(trapezoid((1 - bs) * dv ** 2, bs))
            out.append(ChartEviSlack(t=t, z=z.tolist(), slack=slack))
    if not out:
        raise ValueError("trajectory needs at least two times")
    witness = min(out, key=lambda r: r.slack)
    holds = witness.slack >= -tol
    return ChartEviReport(
        N=None if math.isinf(N) else N, holds=holds, min_slack=witness.slack, tolerance=tol,
        slacks=out, witness=None if holds else witness,
    )
