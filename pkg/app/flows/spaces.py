# app/flows/spaces.py
"""Builders for the discretized spaces used by scenarios and tests."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import math

import numpy as np

from app.flows.tgs import DiscreteGeodesicSpace, TimeGrid

Scale = Union[float, Callable[[float], float]]


def _scale_values(scale: Scale, times: np.ndarray) -> np.ndarray:
    if callable(scale):
        values = np.array([float(scale(float(t))) for t in times])
    else:
        values = np.full(times.size, float(scale))
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("Length scale must stay positive and finite on the grid.")
    return values


def cycle_space(n: int, grid: TimeGrid, scale: Scale = 1.0, radius: float = 1.0) -> DiscreteGeodesicSpace:
    """n-cycle discretizing a circle of the given radius; lengths multiplied by scale(t)."""
    if n < 3:
        raise ValueError("A cycle needs at least 3 vertices.")
    edges = [(i, (i + 1) % n) for i in range(n)]
    h = 2.0 * math.pi * radius / n
    lengths = np.outer(_scale_values(scale, grid.times), np.full(n, h))
    angles = 2.0 * math.pi * np.arange(n) / n
    return DiscreteGeodesicSpace(n, edges, lengths, grid, coords=angles[:, None], name=f"cycle-{n}")


def unit_cycle(n: int, grid: TimeGrid) -> DiscreteGeodesicSpace:
    """n-cycle with unit edge lengths."""
    edges = [(i, (i + 1) % n) for i in range(n)]
    lengths = np.ones((grid.times.size, n))
    return DiscreteGeodesicSpace(n, edges, lengths, grid, coords=np.arange(n, dtype=float)[:, None], name=f"unit-cycle-{n}")


def interval_space(n: int, grid: TimeGrid, a: float = -1.0, b: float = 1.0, scale: Scale = 1.0) -> DiscreteGeodesicSpace:
    """Path graph on n equally spaced points of [a, b]."""
    if n < 1:
        raise ValueError("An interval needs at least one vertex.")
    xs = np.linspace(a, b, n)
    edges = [(i, i + 1) for i in range(n - 1)]
    h = (b - a) / max(n - 1, 1)
    lengths = np.outer(_scale_values(scale, grid.times), np.full(n - 1, h))
    return DiscreteGeodesicSpace(n, edges, lengths, grid, coords=xs[:, None], name=f"interval-{n}")


def points_space(xs, grid: TimeGrid, scale: Scale = 1.0) -> DiscreteGeodesicSpace:
    """Path graph on sorted, possibly uneven points of the line."""
    xs = np.sort(np.asarray(xs, dtype=float))
    if xs.size < 1 or np.any(np.diff(xs) <= 0):
        raise ValueError("points must be distinct.")
    edges = [(i, i + 1) for i in range(xs.size - 1)]
    lengths = np.outer(_scale_values(scale, grid.times), np.diff(xs))
    return DiscreteGeodesicSpace(xs.size, edges, lengths, grid, coords=xs[:, None], name=f"points-{xs.size}")


def sphere_mesh(n_lat: int, n_lon: int, grid: TimeGrid, scale: Scale = 1.0) -> DiscreteGeodesicSpace:
    """
    Latitude/longitude mesh of the unit sphere with the two poles; edges along
    parallels and meridians, lengths are great-circle arcs.
    """
    if n_lat < 1 or n_lon < 3:
        raise ValueError("sphere mesh needs n_lat >= 1 and n_lon >= 3.")
    thetas = np.linspace(0.0, math.pi, n_lat + 2)[1:-1]
    phis = 2.0 * math.pi * np.arange(n_lon) / n_lon
    pts = [(0.0, 0.0)] + [(th, ph) for th in thetas for ph in phis] + [(math.pi, 0.0)]

    def vid(i: int, j: int) -> int:
        return 1 + i * n_lon + (j % n_lon)

    def arc(p, q) -> float:
        (t1, p1), (t2, p2) = p, q
        c = math.cos(t1) * math.cos(t2) + math.sin(t1) * math.sin(t2) * math.cos(p1 - p2)
        return math.acos(max(-1.0, min(1.0, c)))

    edges: List[Tuple[int, int]] = []
    for j in range(n_lon):
        edges.append((0, vid(0, j)))
        edges.append((vid(n_lat - 1, j), len(pts) - 1))
    for i in range(n_lat):
        for j in range(n_lon):
            edges.append((vid(i, j), vid(i, j + 1)))
            if i + 1 < n_lat:
                edges.append((vid(i, j), vid(i + 1, j)))
    base = np.array([arc(pts[a], pts[b]) for a, b in edges])
    lengths = np.outer(_scale_values(scale, grid.times), base)
    return DiscreteGeodesicSpace(len(pts), edges, lengths, grid, coords=np.array(pts), name=f"sphere-{n_lat}x{n_lon}")


def complete_space(D0: np.ndarray, grid: TimeGrid, scale: Scale = 1.0) -> DiscreteGeodesicSpace:
    """Complete graph with base edge lengths D0[i, j] (i < j)."""
    D0 = np.asarray(D0, dtype=float)
    n = D0.shape[0]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    base = np.array([D0[i, j] for i, j in edges])
    lengths = np.outer(_scale_values(scale, grid.times), base) if edges else np.zeros((grid.times.size, 0))
    return DiscreteGeodesicSpace(n, edges, lengths, grid, name=f"complete-{n}")


def load_edge_table(path: Union[str, Path], n_vertices: Optional[int] = None) -> DiscreteGeodesicSpace:
    """
    Space description file: CSV records `t,u,v,length`, one per edge per time.
    Every edge must appear at every time.
    """
    rows: Dict[float, Dict[Tuple[int, int], float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", "u", "v", "length"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"edge table is missing columns: {sorted(missing)}")
        for rec in reader:
            a, b = int(rec["u"]), int(rec["v"])
            key = (min(a, b), max(a, b))
            rows.setdefault(float(rec["t"]), {})[key] = float(rec["length"])
    if not rows:
        raise ValueError("edge table is empty")
    times = sorted(rows)
    edges = sorted(rows[times[0]])
    for t in times:
        if sorted(rows[t]) != edges:
            raise ValueError(f"edge set at t={t} differs from the first time")
    lengths = np.array([[rows[t][e] for e in edges] for t in times])
    n = n_vertices or (1 + max(max(e) for e in edges))
    return DiscreteGeodesicSpace(n, edges, lengths, TimeGrid(np.array(times)), name=Path(path).stem)
