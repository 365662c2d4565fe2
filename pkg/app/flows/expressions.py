# app/flows/expressions.py
"""
Small arithmetic expression grammar for scenario files, backed by sympy.

Accepted: numbers, + - * / ^ (or **), parentheses, the coordinates x, y, z, the time t,
pi, and the functions exp, log, sqrt, sin, cos, tan, cot, sinh, cosh, tanh, abs.
Derivatives are taken symbolically, then lambdified to numpy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from app.errors import ScenarioError

COORDS = ("x", "y", "z")
T = sp.Symbol("t", real=True)
_SYMBOLS = {name: sp.Symbol(name, real=True) for name in COORDS}

_FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "cot": sp.cot,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "abs": sp.Abs,
    "pi": sp.pi,
}

_TRANSFORMS = standard_transformations + (convert_xor,)


def parse_expression(text: str, dim: int = 3, allow_time: bool = True) -> sp.Expr:
    """Parse text with the first dim coordinates (and t) as the only free symbols."""
    allowed = {name: _SYMBOLS[name] for name in COORDS[:dim]}
    if allow_time:
        allowed["t"] = T
    local: Dict[str, object] = dict(_FUNCTIONS)
    local.update(allowed)
    try:
        expr = parse_expr(str(text), local_dict=local, transformations=_TRANSFORMS, evaluate=True)
    except (SyntaxError, TypeError, ValueError, sp.SympifyError) as exc:
        raise ScenarioError(f"cannot parse expression '{text}': {exc}") from exc
    if not isinstance(expr, sp.Expr):
        raise ScenarioError(f"expression '{text}' is not arithmetic")
    unknown = {str(s) for s in expr.free_symbols} - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown symbol(s) {sorted(unknown)} in '{text}'")
    undefined = {str(f.func) for f in expr.atoms(AppliedUndef)}
    if undefined:
        raise ScenarioError(f"unknown function(s) {sorted(undefined)} in '{text}'")
    return expr


def coordinate_symbols(dim: int) -> List[sp.Symbol]:
    if not 1 <= dim <= 3:
        raise ValueError("charts have dimension 1, 2 or 3")
    return [_SYMBOLS[name] for name in COORDS[:dim]]


def _lambdify(expr: sp.Expr, dim: int) -> Callable[[float, np.ndarray], float]:
    syms = [T] + coordinate_symbols(dim)
    fn = sp.lambdify(syms, expr, modules="numpy")
    return lambda t, x: float(fn(float(t), *np.asarray(x, dtype=float)))


# ------------ Compiled fields ------------


@dataclass
class ScalarField:
    """A scalar function of (t, x) with exact first and second partials."""
    expr: sp.Expr
    dim: int
    value: Callable[[float, np.ndarray], float]
    _grad: List[Callable]
    _hess: List[List[Callable]]
    _dt: Callable[[float, np.ndarray], float]

    def grad(self, t: float, x) -> np.ndarray:
        return np.array([g(t, x) for g in self._grad])

    def hess(self, t: float, x) -> np.ndarray:
        """Euclidean second partials (no connection term)."""
        return np.array([[h(t, x) for h in row] for row in self._hess])

    def dt(self, t: float, x) -> float:
        return self._dt(t, x)

    def __call__(self, t: float, x) -> float:
        return self.value(t, x)


def compile_scalar(text: str, dim: int) -> ScalarField:
    expr = parse_expression(text, dim)
    xs = coordinate_symbols(dim)
    grad = [sp.diff(expr, s) for s in xs]
    hess = [[sp.diff(expr, a, b) for b in xs] for a in xs]
    return ScalarField(
        expr=expr,
        dim=dim,
        value=_lambdify(expr, dim),
        _grad=[_lambdify(g, dim) for g in grad],
        _hess=[[_lambdify(h, dim) for h in row] for row in hess],
        _dt=_lambdify(sp.diff(expr, T), dim),
    )


@dataclass
class MatrixField:
    """Symmetric matrix function of (t, x) with exact time derivative."""
    dim: int
    _entries: List[List[Callable]]
    _dt: List[List[Callable]]

    def __call__(self, t: float, x) -> np.ndarray:
        return np.array([[e(t, x) for e in row] for row in self._entries])

    def dt(self, t: float, x) -> np.ndarray:
        return np.array([[e(t, x) for e in row] for row in self._dt])


def compile_matrix(entries: Sequence[Sequence[str]], dim: int) -> MatrixField:
    if len(entries) != dim or any(len(row) != dim for row in entries):
        raise ScenarioError(f"metric must be a {dim}x{dim} table of expressions")
    exprs = [[parse_expression(e, dim) for e in row] for row in entries]
    for i in range(dim):
        for j in range(i + 1, dim):
            if sp.simplify(exprs[i][j] - exprs[j][i]) != 0:
                raise ScenarioError("metric expressions must be symmetric")
    return MatrixField(
        dim=dim,
        _entries=[[_lambdify(e, dim) for e in row] for row in exprs],
        _dt=[[_lambdify(sp.diff(e, T), dim) for e in row] for row in exprs],
    )


def compile_time_function(text: str) -> Tuple[Callable[[float], float], Callable[[float], float]]:
    """c(t) and c'(t) from an expression in t only."""
    expr = parse_expression(text, dim=0, allow_time=True)
    c = sp.lambdify([T], expr, modules="numpy")
    dc = sp.lambdify([T], sp.diff(expr, T), modules="numpy")
    return (lambda t: float(c(float(t)))), (lambda t: float(dc(float(t))))
