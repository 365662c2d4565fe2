# app/scenario.py
"""Scenario loading and the instance builders behind every check."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from app.errors import ScenarioError
from app.flows.ddi import MmInstance
from app.flows.dynconv import Potential
from app.flows.expressions import compile_scalar, compile_time_function
from app.flows.gammacalc import (
    GeneratorFamily,
    circle_laplacian,
    interval_laplacian,
    random_markov_generator,
    two_point,
)
from app.flows.model_metrics import get_model
from app.flows.riemann import ChartPotential, RiemannianFamily
from app.flows.spaces import (
    complete_space,
    cycle_space,
    interval_space,
    load_edge_table,
    points_space,
    sphere_mesh,
    unit_cycle,
)
from app.flows.tgs import DiscreteGeodesicSpace, TimeGrid
from app.flows.transport import ProbabilityVector, TdMmSpace
from app.schemas import InstanceSpec, Scenario


# ------------ Loading ------------


_WHITESPACE = re.compile(r"[ \t\n\r]*")


def _skip(text: str, i: int) -> int:
    return _WHITESPACE.match(text, i).end()


def _locate(text: str, loc) -> Optional[int]:
    """Offset of the deepest key or list item of a validation error location present in text."""
    decoder = json.JSONDecoder()
    pos, found = _skip(text, 0), None
    for part in loc:
        opener = text[pos] if pos < len(text) else ""
        if opener == "{" and isinstance(part, str):
            i, hit = _skip(text, pos + 1), None
            while text[i] != "}":
                key_at = i
                key, i = decoder.raw_decode(text, i)
                i = _skip(text, _skip(text, i) + 1)
                if key == part:
                    hit = (key_at, i)
                    break
                _, i = decoder.raw_decode(text, i)
                i = _skip(text, i)
                if text[i] == ",":
                    i = _skip(text, i + 1)
            if hit is None:
                break
            found, pos = hit
        elif opener == "[" and isinstance(part, int):
            i, index = _skip(text, pos + 1), 0
            while text[i] != "]" and index < part:
                _, i = decoder.raw_decode(text, i)
                i = _skip(text, i)
                if text[i] == ",":
                    i = _skip(text, i + 1)
                index += 1
            if text[i] == "]":
                break
            found = pos = i
        else:
            break
    return found


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        at = _locate(text, first["loc"])
        if at is None:
            raise ScenarioError(f"{source}: {where}: {first['msg']} (no source position)") from exc
        line = text.count("\n", 0, at) + 1
        column = at - text.rfind("\n", 0, at)
        raise ScenarioError(f"{source}: {where}: {first['msg']}", line=line, column=column) from exc


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, source=str(path))


def scenario_hash(scenario: Scenario) -> str:
    canonical = json.dumps(scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def bundled_scenarios() -> List[Path]:
    return sorted((Path(__file__).parent / "scenarios").glob("*.json"))


# ------------ Builders ------------


def _scale(expr: Optional[str]):
    if expr is None or expr.strip() == "1":
        return 1.0
    return compile_time_function(expr)[0]


@dataclass
class ScenarioContext:
    """Builds (and caches) the objects a scenario's checks operate on."""
    scenario: Scenario
    tolerance: Optional[float] = None
    seed: Optional[int] = None
    _cache: Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.tolerance is None:
            self.tolerance = self.scenario.tolerance
        if self.seed is None:
            self.seed = self.scenario.seed

    def _cached(self, key: str, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def grid(self) -> TimeGrid:
        spec = self.scenario.time_grid
        return self._cached("grid", lambda: TimeGrid.uniform(spec.start, spec.stop, spec.steps))

    # --- discrete spaces ---

    @property
    def space(self) -> DiscreteGeodesicSpace:
        return self._cached("space", self._build_space)

    def _build_space(self) -> DiscreteGeodesicSpace:
        spec = self.scenario.space
        if spec is None:
            raise ScenarioError("scenario has no 'space' section")
        grid = self.grid
        scale = _scale(spec.scale)

        def need(name: str):
            value = getattr(spec, name)
            if value is None:
                raise ScenarioError(f"space kind '{spec.kind}' needs '{name}'")
            return value

        if spec.kind == "cycle":
            return cycle_space(need("n"), grid, scale, spec.radius)
        if spec.kind == "unit-cycle":
            return unit_cycle(need("n"), grid)
        if spec.kind == "interval":
            return interval_space(need("n"), grid, spec.a, spec.b, scale)
        if spec.kind == "points":
            return points_space(need("points"), grid, scale)
        if spec.kind == "complete":
            return complete_space(np.asarray(need("distances"), dtype=float), grid, scale)
        if spec.kind == "sphere-mesh":
            return sphere_mesh(need("n_lat"), need("n_lon"), grid, scale)
        space = load_edge_table(need("path"))
        if space.times.size != grid.times.size or not np.allclose(space.times, grid.times):
            raise ScenarioError("edge table times differ from the scenario time grid")
        return space

    @property
    def reference_measure(self) -> ProbabilityVector:
        spec = self.scenario.measure
        n = self.space.n_vertices
        if spec is None or spec.weights is None:
            return ProbabilityVector.uniform(n)
        if len(spec.weights) != n:
            raise ScenarioError(f"measure needs {n} weights")
        return ProbabilityVector.normalized(spec.weights)

    @property
    def tdmm(self) -> TdMmSpace:
        return self._cached("tdmm", self._build_tdmm)

    def _build_tdmm(self) -> TdMmSpace:
        space = self.space
        spec = self.scenario.weights
        m = self.reference_measure
        if spec is None:
            return TdMmSpace(space, m, np.zeros((space.times.size, space.n_vertices)), name=self.scenario.name)
        if spec.table is not None:
            f = np.asarray(spec.table, dtype=float)
        elif spec.expression is not None:
            coords = space.coords if space.coords is not None else np.arange(space.n_vertices, dtype=float)[:, None]
            dim = min(coords.shape[1], 3)
            field_ = compile_scalar(spec.expression, dim)
            f = np.array([[field_(t, coords[x, :dim]) for x in range(space.n_vertices)] for t in space.times])
        else:
            raise ScenarioError("weights need an 'expression' or a 'table'")
        return TdMmSpace(space, m, f, f_bound=spec.bound, name=self.scenario.name)

    @property
    def potential(self) -> Potential:
        return self._cached("potential", self._build_potential)

    def _build_potential(self) -> Potential:
        spec = self.scenario.potential
        if spec is None:
            raise ScenarioError("scenario has no 'potential' section")
        if spec.kind == "quadratic":
            return Potential.quadratic(self.space, spec.coeff, spec.center)
        if spec.kind == "entropy":
            return Potential.entropy_delegate(self.tdmm)
        if spec.kind == "table":
            if spec.table is None:
                raise ScenarioError("table potential needs 'table'")
            return Potential.tabulated(self.space, spec.table)
        if spec.expression is None:
            raise ScenarioError("expression potential needs 'expression'")
        space = self.space
        coords = space.coords if space.coords is not None else np.arange(space.n_vertices, dtype=float)[:, None]
        dim = min(coords.shape[1], 3)
        field_ = compile_scalar(spec.expression, dim)
        return Potential(lambda t, x: field_(t, coords[x, :dim]), name=spec.expression)

    # --- generators ---

    @property
    def generator(self) -> GeneratorFamily:
        return self._cached("generator", self._build_generator)

    def _build_generator(self) -> GeneratorFamily:
        spec = self.scenario.generator
        if spec is None:
            raise ScenarioError("scenario has no 'generator' section")
        grid = self.grid
        if spec.kind == "circle-laplacian":
            return circle_laplacian(spec.n or 64, grid, spec.scale)
        if spec.kind == "interval-laplacian":
            return interval_laplacian(spec.n or 64, grid, spec.scale)
        if spec.kind in ("two-point", "random-markov"):
            if spec.kind == "two-point":
                L0 = two_point(spec.rate)
            else:
                rng = np.random.default_rng(self.seed if spec.seed is None else spec.seed)
                L0 = random_markov_generator(spec.n or 4, rng)
            c = _scale(spec.scale)
            rate = (lambda t: L0) if c == 1.0 else (lambda t: c(t) * L0)
            return GeneratorFamily.from_rate(rate, grid, name=spec.kind)
        if spec.matrices is None:
            raise ScenarioError("matrix generator needs 'matrices'")
        L = np.asarray(spec.matrices, dtype=float)
        if L.shape[0] == 1:
            L = np.repeat(L, grid.times.size, axis=0)
        markov = bool(all((L[k] - np.diag(np.diag(L[k]))).min() >= 0 for k in range(L.shape[0])))
        try:
            return GeneratorFamily(grid, L, markov=markov, name="matrix")
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    # --- charts ---

    @property
    def chart(self) -> RiemannianFamily:
        return self._cached("chart", self._build_chart)

    def _build_chart(self) -> RiemannianFamily:
        spec = self.scenario.chart
        if spec is None:
            raise ScenarioError("scenario has no 'chart' section")
        if spec.model is not None:
            model = get_model(spec.model, spec.dim)
            weight = ChartPotential.from_expression(spec.weight, model.dim) if spec.weight else None
            return RiemannianFamily.conformal(model, self.grid, spec.scale, weight=weight, box=spec.box, name=self.scenario.name)
        if spec.metric is None or spec.box is None:
            raise ScenarioError("chart needs a 'model' or both 'metric' and 'box'")
        return RiemannianFamily.from_expressions(spec.metric, spec.box, self.grid, spec.weight, name=self.scenario.name)

    @property
    def chart_potential(self) -> ChartPotential:
        spec = self.scenario.chart
        if spec is None or spec.potential is None:
            raise ScenarioError("chart has no 'potential'")
        return ChartPotential.from_expression(spec.potential, self.chart.dim)

    # --- mm-space instances ---

    def instance(self, name: Optional[str] = None) -> MmInstance:
        key = f"instance:{name}"
        return self._cached(key, lambda: self._build_instance(name))

    def _build_instance(self, name: Optional[str]) -> MmInstance:
        if name is None:
            if self.scenario.instance is not None:
                return build_instance(self.scenario.instance, self.grid, self.scenario.name)
            return MmInstance.from_tdmm(self.tdmm)
        try:
            spec = self.scenario.instances[name]
        except KeyError:
            raise ScenarioError(f"unknown instance '{name}'")
        return build_instance(spec, self.grid, name)


def build_instance(spec: InstanceSpec, grid: TimeGrid, name: str) -> MmInstance:
    M1 = grid.times.size
    D = np.asarray(spec.distances, dtype=float)
    if D.ndim == 2:
        D = np.repeat(D[None], M1, axis=0)
    if D.ndim != 3 or D.shape[0] != M1:
        raise ScenarioError(f"instance '{name}' needs one distance matrix or one per grid time")
    n = D.shape[1]
    m = ProbabilityVector.uniform(n) if spec.m is None else ProbabilityVector.normalized(spec.m)
    if spec.f is None:
        f = np.zeros((M1, n))
    else:
        f = np.asarray(spec.f, dtype=float)
        if f.ndim == 1:
            f = np.repeat(f[None], M1, axis=0)
    try:
        return MmInstance(grid, D, m, f, name=name)
    except ValueError as exc:
        raise ScenarioError(f"instance '{name}': {exc}") from exc
