# app/flows/model_metrics.py
"""Model metrics with closed-form Christoffel symbols, Ricci tensor, distance and geodesics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import math

import numpy as np


@dataclass(frozen=True)
class ModelMetric:
    name: str
    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    christoffel: Callable[[np.ndarray], np.ndarray]   # [k, i, j] = Gamma^k_ij
    ricci: Callable[[np.ndarray], np.ndarray]
    distance: Callable[[np.ndarray, np.ndarray], float]
    box: List[Tuple[float, float]]
    geodesic: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None


# ------------ Flat ------------


def flat(dim: int = 2, half_width: float = 1.0) -> ModelMetric:
    if not 1 <= dim <= 3:
        raise ValueError("charts have dimension 1, 2 or 3")
    return ModelMetric(
        name="flat",
        dim=dim,
        metric=lambda x: np.eye(dim),
        christoffel=lambda x: np.zeros((dim, dim, dim)),
        ricci=lambda x: np.zeros((dim, dim)),
        distance=lambda x, y: float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float))),
        box=[(-half_width, half_width)] * dim,
        geodesic=lambda x, y, b: (1 - b) * np.asarray(x, float) + b * np.asarray(y, float),
    )


# ------------ Round sphere in (theta, phi) ------------


def _embed(p: np.ndarray) -> np.ndarray:
    th, ph = p
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


def _sphere_metric(p):
    return np.diag([1.0, math.sin(p[0]) ** 2])


def _sphere_christoffel(p):
    th = p[0]
    G = np.zeros((2, 2, 2))
    G[0, 1, 1] = -math.sin(th) * math.cos(th)
    G[1, 0, 1] = G[1, 1, 0] = math.cos(th) / math.sin(th)
    return G


def _sphere_distance(p, q) -> float:
    c = math.cos(p[0]) * math.cos(q[0]) + math.sin(p[0]) * math.sin(q[0]) * math.cos(p[1] - q[1])
    return math.acos(max(-1.0, min(1.0, c)))


def _sphere_geodesic(p, q, b: float) -> np.ndarray:
    u, v = _embed(p), _embed(q)
    omega = math.acos(max(-1.0, min(1.0, float(u @ v))))
    if omega < 1e-14:
        return np.asarray(p, dtype=float)
    w = (math.sin((1 - b) * omega) * u + math.sin(b * omega) * v) / math.sin(omega)
    th = math.acos(max(-1.0, min(1.0, w[2])))
    ph = math.atan2(w[1], w[0])
    ph += 2 * math.pi * round((p[1] - ph) / (2 * math.pi))
    return np.array([th, ph])


def sphere() -> ModelMetric:
    """Unit S^2 away from the poles; Ric = g."""
    return ModelMetric(
        name="sphere",
        dim=2,
        metric=_sphere_metric,
        christoffel=_sphere_christoffel,
        ricci=_sphere_metric,
        distance=_sphere_distance,
        box=[(0.3, math.pi - 0.3), (-math.pi / 2, math.pi / 2)],
        geodesic=_sphere_geodesic,
    )


# ------------ Hyperbolic half-plane ------------


def _hyp_metric(p):
    return np.eye(2) / p[1] ** 2


def _hyp_christoffel(p):
    y = p[1]
    G = np.zeros((2, 2, 2))
    G[0, 0, 1] = G[0, 1, 0] = -1.0 / y
    G[1, 0, 0] = 1.0 / y
    G[1, 1, 1] = -1.0 / y
    return G


def _hyp_distance(p, q) -> float:
    d2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
    return math.acosh(1.0 + d2 / (2.0 * p[1] * q[1]))


def hyperbolic() -> ModelMetric:
    """Upper half-plane, curvature -1; Ric = -g."""
    return ModelMetric(
        name="hyperbolic",
        dim=2,
        metric=_hyp_metric,
        christoffel=_hyp_christoffel,
        ricci=lambda p: -_hyp_metric(p),
        distance=_hyp_distance,
        box=[(-1.0, 1.0), (0.5, 2.0)],
    )


MODELS: Dict[str, Callable[..., ModelMetric]] = {
    "flat": flat,
    "sphere": sphere,
    "hyperbolic": hyperbolic,
}


def get_model(name: str, dim: int = 2) -> ModelMetric:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model metric '{name}'; expected one of {', '.join(MODELS)}")
    return factory(dim) if name == "flat" else factory()
