# app/flows/network_simplex.py
"""
Transportation simplex (network simplex on the bipartite supply/demand graph).

Basis = spanning tree of m + n - 1 cells; potentials u_i + v_j = c_ij on the tree
(MODI / u-v method); the entering cell has the most negative reduced cost, the
leaving cell closes the tree cycle. Works on floats or on fractions.Fraction
(exact=True), in which case all comparisons are exact.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import logging

import numpy as np

from app.errors import NumericalFailure
from app.settings import settings

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


@dataclass
class TransportSolution:
    flow: np.ndarray          # full (len(supply), len(demand)) plan
    cost: float
    basis: List[Cell]         # basic cells in full indices
    pivots: int
    exact_cost: Optional[Fraction] = None


def _to_exact(values) -> List[Fraction]:
    return [v if isinstance(v, Fraction) else Fraction(v).limit_denominator(10 ** 12) for v in values]


def _northwest_corner(a: list, b: list) -> Tuple[Dict[Cell, object], List[Cell]]:
    a, b = list(a), list(b)
    m, n = len(a), len(b)
    flow: Dict[Cell, object] = {}
    basis: List[Cell] = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        if x < 0:
            x = 0 * x
        flow[(i, j)] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif a[i] <= b[j]:
            # ties advance the row; the next cell enters with zero flow (degenerate basis)
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(basis: List[Cell], C, m: int, n: int, zero):
    u: List[Optional[object]] = [None] * m
    v: List[Optional[object]] = [None] * n
    by_row: Dict[int, List[int]] = {}
    by_col: Dict[int, List[int]] = {}
    for i, j in basis:
        by_row.setdefault(i, []).append(j)
        by_col.setdefault(j, []).append(i)
    u[0] = zero
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in by_row.get(k, []):
                if v[j] is None:
                    v[j] = C[k][j] - u[k]
                    queue.append(("c", j))
        else:
            for i in by_col.get(k, []):
                if u[i] is None:
                    u[i] = C[i][k] - v[k]
                    queue.append(("r", i))
    if any(x is None for x in u) or any(x is None for x in v):
        raise NumericalFailure("transport basis is not a spanning tree")
    return u, v


def _tree_path(basis: List[Cell], m: int, start_col: int, end_row: int) -> List[Cell]:
    """Cells of the unique tree path from column node start_col to row node end_row."""
    adj: Dict[int, List[Tuple[int, Cell]]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append((m + j, (i, j)))
        adj.setdefault(m + j, []).append((i, (i, j)))
    src, dst = m + start_col, end_row
    parent: Dict[int, Tuple[int, Cell]] = {src: (-1, (-1, -1))}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for nxt, cell in adj.get(node, []):
            if nxt not in parent:
                parent[nxt] = (node, cell)
                queue.append(nxt)
    path: List[Cell] = []
    node = dst
    while node != src:
        prev, cell = parent[node]
        path.append(cell)
        node = prev
    path.reverse()
    return path


def solve_transport(
    supply: Sequence[float],
    demand: Sequence[float],
    cost,
    *,
    exact: bool = False,
    max_pivots: Optional[int] = None,
) -> TransportSolution:
    """
    Minimize sum c_ij q_ij over q >= 0 with row sums = supply, column sums = demand.
    Returns an optimal vertex (basic) plan.
    """
    cost = np.asarray(cost, dtype=float) if not exact else cost
    m_full, n_full = len(supply), len(demand)
    if exact:
        a_all, b_all = _to_exact(supply), _to_exact(demand)
        if sum(a_all) != sum(b_all):
            raise ValueError("marginal sums differ")
    else:
        a_all = [float(x) for x in supply]
        b_all = [float(x) for x in demand]
        scale = max(1.0, sum(abs(x) for x in a_all))
        if abs(sum(a_all) - sum(b_all)) > 1e-9 * scale:
            raise ValueError("marginal sums differ")
    if any(x < 0 for x in a_all) or any(x < 0 for x in b_all):
        raise ValueError("marginals must be nonnegative")

    rows = [i for i, x in enumerate(a_all) if x > 0]
    cols = [j for j, x in enumerate(b_all) if x > 0]
    if not rows or not cols:
        raise ValueError("marginals must have positive mass")
    m, n = len(rows), len(cols)
    a = [a_all[i] for i in rows]
    b = [b_all[j] for j in cols]
    # last column absorbs rounding so both sides balance exactly
    if not exact:
        b[-1] += sum(a) - sum(b)

    if exact:
        C = [[Fraction(cost[r][c]).limit_denominator(10 ** 12) if not isinstance(cost[r][c], Fraction) else cost[r][c]
              for c in cols] for r in rows]
        zero = Fraction(0)
        eps = Fraction(0)
    else:
        Cm = np.asarray(cost, dtype=float)[np.ix_(rows, cols)]
        C = Cm.tolist()
        zero = 0.0
        eps = 1e-12 * max(1.0, float(np.abs(Cm).max()) if Cm.size else 1.0)

    flow, basis = _northwest_corner(a, b)
    max_pivots = max_pivots or settings.simplex_max_pivots
    pivots = 0
    degenerate_streak = 0

    while True:
        u, v = _potentials(basis, C, m, n, zero)
        in_basis = set(basis)
        bland = degenerate_streak > m + n
        entering: Optional[Cell] = None
        best = -eps
        for i in range(m):
            ci, ui = C[i], u[i]
            for j in range(n):
                if (i, j) in in_basis:
                    continue
                r = ci[j] - ui - v[j]
                if r < best if not bland else r < -eps:
                    entering, best = (i, j), r
                    if bland:
                        break
            if bland and entering is not None:
                break
        if entering is None:
            break

        pivots += 1
        if pivots > max_pivots:
            raise NumericalFailure(
                f"network simplex exceeded {max_pivots} pivots",
                suggestion="raise SIMPLEX_MAX_PIVOTS or check the cost matrix for NaNs",
            )

        ei, ej = entering
        path = _tree_path(basis, m, ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] - theta <= eps)
        degenerate_streak = degenerate_streak + 1 if theta <= eps else 0

        for c in minus:
            flow[c] = flow[c] - theta
        for c in plus:
            flow[c] = flow[c] + theta
        flow[entering] = theta
        del flow[leaving]
        basis.remove(leaving)
        basis.append(entering)

    plan = np.zeros((m_full, n_full))
    total = zero
    for (i, j), x in flow.items():
        if not exact and x < 0:
            x = 0.0
        plan[rows[i], cols[j]] = float(x)
        total += C[i][j] * x
    logger.debug("transport solved: %d x %d support, %d pivots", m, n, pivots)
    return TransportSolution(
        flow=plan,
        cost=float(total),
        basis=[(rows[i], cols[j]) for i, j in basis],
        pivots=pivots,
        exact_cost=total if exact else None,
    )
