# app/runner.py
"""
Check registry, scenario execution and report emission.

Every check names an op `module.function` and a params object. Ops are thin adapters:
they turn JSON params into library arguments and return the library's verdict.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, is_dataclass
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from app import __version__
from app.errors import NumericalFailure, ScenarioError
from app.flows import convexity1d, ddi, dynconv, gammacalc, riemann, srfcheck, tgs, transport
from app.flows.convexity1d import SampledFunction1D
from app.flows.expressions import compile_scalar
from app.flows.transport import ProbabilityVector
from app.scenario import ScenarioContext, scenario_hash
from app.schemas import CheckRecord, CheckSpec, ReportDocument, Scenario, SlackPoint
from app.settings import settings

logger = logging.getLogger(__name__)

STATUS_RANK = {"pass": 0, "undetermined": 1, "fail": 2}


# ------------ Param helpers ------------


def _times(ctx: ScenarioContext, value: Any, default: str = "interior") -> List[float]:
    value = default if value is None else value
    grid = ctx.grid
    if value == "interior":
        return grid.interior()
    if value == "all":
        return [float(t) for t in grid.times]
    if isinstance(value, (int, float)):
        return [float(grid.times[grid.index_of(float(value))])]
    if isinstance(value, list):
        return [float(grid.times[grid.index_of(float(v))]) for v in value]
    raise ScenarioError(f"cannot read times from {value!r}")


def _measure(spec: Any, n: int) -> ProbabilityVector:
    if isinstance(spec, int):
        return ProbabilityVector.point_mass(spec, n)
    if isinstance(spec, list):
        return ProbabilityVector.normalized(spec)
    if isinstance(spec, dict):
        if "point" in spec:
            return ProbabilityVector.point_mass(int(spec["point"]), n)
        if "uniform" in spec:
            return ProbabilityVector.uniform(n, spec["uniform"])
        if "weights" in spec:
            return ProbabilityVector.normalized(spec["weights"])
        if "mapping" in spec:
            return ProbabilityVector.from_mapping({int(k): v for k, v in spec["mapping"].items()}, n)
    raise ScenarioError(f"cannot read a measure from {spec!r}")


def _measure_pairs(ctx: ScenarioContext, spec: Any):
    if spec is None:
        return None
    n = ctx.space.n_vertices
    return [(_measure(a, n), _measure(b, n)) for a, b in spec]


def _vertex_pairs(spec: Any):
    return None if spec is None else [(int(a), int(b)) for a, b in spec]


def _number(value: Any, default: float = math.inf) -> float:
    if value is None:
        return default
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    return float(value)


def _sampled(params: Dict[str, Any]) -> SampledFunction1D:
    if "values" in params:
        values = np.asarray(params["values"], dtype=float)
        grid = np.asarray(params.get("grid", np.linspace(0.0, 1.0, values.size)), dtype=float)
        return SampledFunction1D(grid, values)
    if "expression" in params:
        f = compile_scalar(params["expression"], 1)
        return SampledFunction1D.from_callable(lambda x: f(0.0, [x]), int(params.get("n", 101)))
    raise ScenarioError("sampled function needs 'values' or 'expression'")


# ------------ Ops ------------


@dataclass(frozen=True)
class Op:
    name: str
    run: Callable[[ScenarioContext, Dict[str, Any], Optional[float]], Any]
    params: FrozenSet[str]


REGISTRY: Dict[str, Op] = {}


def op(name: str, *params: str):
    def register(fn):
        REGISTRY[name] = Op(name, fn, frozenset(params))
        return fn
    return register


def _per_time(ctx, p, fn, default="interior"):
    return [fn(t) for t in _times(ctx, p.get("t"), default)]


# convexity1d

@op("convexity1d.is_k_convex", "values", "grid", "expression", "n", "K")
def _op_k_convex(ctx, p, tol):
    return convexity1d.is_k_convex(_sampled(p), float(p.get("K", 0.0)), tol)


@op("convexity1d.is_kn_convex", "values", "grid", "expression", "n", "K", "N")
def _op_kn_convex(ctx, p, tol):
    return convexity1d.is_kn_convex(_sampled(p), float(p.get("K", 0.0)), _number(p.get("N")), tol)


@op("convexity1d.is_midpoint_k_convex", "values", "grid", "expression", "n", "K")
def _op_midpoint(ctx, p, tol):
    return convexity1d.is_midpoint_k_convex(_sampled(p), float(p.get("K", 0.0)), tol)


# tgs

@op("tgs.estimate_controls")
def _op_controls(ctx, p, tol):
    est = tgs.estimate_controls(ctx.space)
    return {"times": est.times.tolist(), "kappa": est.kappa.tolist(), "lambda": est.lam.tolist()}


@op("tgs.action", "path", "t")
def _op_action(ctx, p, tol):
    t = _times(ctx, p.get("t"), "all")[0]
    gamma = tgs.DiscreteGeodesic.from_path(ctx.space, p["path"], t)
    return {"t": t, "action": tgs.action(gamma), "infinitesimal_action": tgs.infinitesimal_action(gamma)}


@op("tgs.strain", "path", "t")
def _op_strain(ctx, p, tol):
    t = _times(ctx, p.get("t"))[0]
    gamma = tgs.DiscreteGeodesic.from_path(ctx.space, p["path"], t)
    return {"t": t, "strain": tgs.strain(ctx.space, gamma)}


# transport

@op("transport.wasserstein", "mu", "nu", "t", "exact")
def _op_w2(ctx, p, tol):
    n = ctx.space.n_vertices
    t = _times(ctx, p.get("t"), "all")[0]
    W, cpl = transport.wasserstein(ctx.space, t, _measure(p["mu"], n), _measure(p["nu"], n), bool(p.get("exact", False)))
    return {"t": t, "value": W, "coupling": cpl.matrix.tolist()}


@op("transport.entropy", "mu", "t")
def _op_entropy(ctx, p, tol):
    t = _times(ctx, p.get("t"), "all")[0]
    mu = _measure(p["mu"], ctx.space.n_vertices)
    ent, pot = transport.entropy_decomposition(mu, ctx.tdmm, t)
    return {"t": t, "value": transport.entropy(mu, ctx.tdmm, t), "relative_entropy": ent, "potential_energy": pot}


@op("transport.bound_transfer", "mu", "nu", "s", "t", "c1")
def _op_transfer(ctx, p, tol):
    n = ctx.space.n_vertices
    res = transport.wasserstein_bound_transfer(
        ctx.space, float(p["s"]), float(p["t"]), _measure(p["mu"], n), _measure(p["nu"], n), float(p.get("c1", 0.0))
    )
    return asdict(res)


# dynconv

@op("dynconv.check_dynamic_convexity", "t", "form", "N", "lam", "pairs")
def _op_dynconv(ctx, p, tol):
    N = _number(p.get("N"))
    lam = None if p.get("lam") is None else float(p["lam"])
    return _per_time(ctx, p, lambda t: dynconv.check_dynamic_N_convexity(
        ctx.space, ctx.potential, t, N, p.get("form", "slope"), tol, lam, _vertex_pairs(p.get("pairs"))))


@op("dynconv.check_weak_difference", "t", "K", "lam", "pairs")
def _op_weak_difference(ctx, p, tol):
    lam = None if p.get("lam") is None else float(p["lam"])
    return _per_time(ctx, p, lambda t: dynconv.check_weak_difference(
        ctx.space, ctx.potential, t, float(p["K"]), lam, tol, _vertex_pairs(p.get("pairs"))))


@op("dynconv.check_evi", "trajectory", "z_points", "N")
def _op_evi(ctx, p, tol):
    return dynconv.check_evi(ctx.space, ctx.potential, p["trajectory"], p.get("z_points"), tol, _number(p.get("N")))


# srfcheck

@op("srfcheck.check_super_ricci_strong", "t", "pairs")
def _op_srf_strong(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    return _per_time(ctx, p, lambda t: srfcheck.check_super_ricci_strong(ctx.tdmm, t, pairs, tol))


@op("srfcheck.check_super_ricci_moderate", "t", "lam", "pairs")
def _op_srf_moderate(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    lam = None if p.get("lam") is None else float(p["lam"])
    return _per_time(ctx, p, lambda t: srfcheck.check_super_ricci_moderate(ctx.tdmm, t, lam, pairs, tol))


@op("srfcheck.check_super_N_ricci", "t", "N", "lam", "pairs", "moderate")
def _op_srf_n(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    lam = None if p.get("lam") is None else float(p["lam"])
    return _per_time(ctx, p, lambda t: srfcheck.check_super_N_ricci(
        ctx.tdmm, t, _number(p.get("N")), lam, pairs, tol, bool(p.get("moderate", False))))


@op("srfcheck.check_averaged_flow", "J", "N", "lam", "pairs")
def _op_averaged(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    lam = None if p.get("lam") is None else float(p["lam"])
    J = tuple(p.get("J", (float(ctx.grid.times[0]), float(ctx.grid.times[-1]))))
    return srfcheck.check_averaged_flow(ctx.tdmm, J, _number(p.get("N")), lam, pairs, tol)


@op("srfcheck.check_log_ricci", "t", "pairs")
def _op_log_ricci(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    return _per_time(ctx, p, lambda t: srfcheck.check_log_ricci(ctx.tdmm, t, pairs, tol))


@op("srfcheck.check_weak_sub_ricci", "t", "epsilon", "partition", "open_sets")
def _op_weak_sub(ctx, p, tol):
    return _per_time(ctx, p, lambda t: srfcheck.check_weak_sub_ricci(
        ctx.tdmm, t, float(p["epsilon"]), p["partition"], p.get("open_sets"), tol))


@op("srfcheck.check_weak_ricci", "t", "epsilon", "partition", "open_sets", "pairs")
def _op_weak_ricci(ctx, p, tol):
    pairs = _measure_pairs(ctx, p.get("pairs"))
    return _per_time(ctx, p, lambda t: srfcheck.check_weak_ricci(
        ctx.tdmm, t, float(p["epsilon"]), p["partition"], p.get("open_sets"), pairs, tol))


@op("srfcheck.check_upper_ricci_static", "t", "K", "Kprime", "covering", "k_variable")
def _op_upper(ctx, p, tol):
    t = _times(ctx, p.get("t"), "all")[0]
    return srfcheck.check_upper_ricci_static(
        ctx.tdmm, float(p["K"]), float(p["Kprime"]), p["covering"], tol, t, p.get("k_variable"))


# riemann

@op("riemann.check_srf_tensor", "per_axis")
def _op_srf_tensor(ctx, p, tol):
    return riemann.check_srf_tensor(ctx.chart, tol, int(p.get("per_axis", 5)))


@op("riemann.check_sub_rf_tensor", "per_axis")
def _op_sub_tensor(ctx, p, tol):
    return riemann.check_sub_rf_tensor(ctx.chart, tol, int(p.get("per_axis", 5)))


@op("riemann.check_ricci_flow_tensor", "per_axis")
def _op_rf_tensor(ctx, p, tol):
    return riemann.check_ricci_flow_tensor(ctx.chart, tol, int(p.get("per_axis", 5)))


@op("riemann.check_N_srf_tensor", "N", "per_axis")
def _op_n_tensor(ctx, p, tol):
    return riemann.check_N_srf_tensor(ctx.chart, _number(p.get("N")), tol, int(p.get("per_axis", 5)))


@op("riemann.check_upper_ricci_tensor", "K", "per_axis")
def _op_upper_tensor(ctx, p, tol):
    return riemann.check_upper_ricci_tensor(ctx.chart, float(p["K"]), tol, int(p.get("per_axis", 5)))


@op("riemann.check_dynamic_convexity_tensor", "per_axis")
def _op_dyn_tensor(ctx, p, tol):
    return riemann.check_dynamic_convexity_tensor(ctx.chart, ctx.chart_potential, tol, int(p.get("per_axis", 5)))


@op("riemann.check_backward_dynamic_convexity", "per_axis")
def _op_backward_tensor(ctx, p, tol):
    return riemann.check_backward_dynamic_convexity(ctx.chart, ctx.chart_potential, tol, int(p.get("per_axis", 5)))


@op("riemann.check_weight_identity", "per_axis")
def _op_weight_identity(ctx, p, tol):
    return riemann.check_weight_identity(ctx.chart, tol, int(p.get("per_axis", 5)))


@op("riemann.check_distance_expansion", "x", "y", "T", "start", "dt")
def _op_expansion(ctx, p, tol):
    return riemann.check_distance_expansion(
        ctx.chart, ctx.chart_potential, p["x"], p["y"], p.get("T"), p.get("start"), p.get("dt"), tol)


@op("riemann.check_evi_chart", "x", "z_points", "T", "start", "dt", "N")
def _op_evi_chart(ctx, p, tol):
    T = float(ctx.grid.times[-1]) if p.get("T") is None else float(p["T"])
    traj = riemann.gradient_flow(ctx.chart, ctx.chart_potential, (T, p["x"]), p.get("start"), p.get("dt"))
    return riemann.check_evi_chart(ctx.chart, ctx.chart_potential, traj, p["z_points"], tol, _number(p.get("N")))


# gammacalc

@op("gammacalc.check_srf_gamma", "t")
def _op_srf_gamma(ctx, p, tol):
    return _per_time(ctx, p, lambda t: gammacalc.check_srf_gamma(ctx.generator, t, tol))


@op("gammacalc.check_sub_ricci_gamma", "t")
def _op_sub_gamma(ctx, p, tol):
    return _per_time(ctx, p, lambda t: gammacalc.check_sub_ricci_gamma(ctx.generator, t, tol))


@op("gammacalc.check_srf_N_gamma", "t", "N")
def _op_srf_n_gamma(ctx, p, tol):
    return _per_time(ctx, p, lambda t: gammacalc.check_srf_N_gamma(ctx.generator, t, _number(p.get("N")), tol))


def _estimate_pairs(ctx, p) -> List[Tuple[float, float]]:
    times = [float(t) for t in ctx.grid.times]
    if "s" in p or "t" in p:
        return [(float(p.get("s", times[0])), float(p.get("t", times[-1])))]
    return [(s, t) for i, s in enumerate(times) for t in times[i + 1:]]


def _functions(ctx, p):
    if p.get("functions") is not None:
        return [np.asarray(u, dtype=float) for u in p["functions"]]
    return gammacalc.default_test_functions(ctx.generator.n, ctx.seed)


@op("gammacalc.check_gradient_estimate", "s", "t", "functions")
def _op_gradient_estimate(ctx, p, tol):
    prop = gammacalc.build_propagator(ctx.generator)
    us = _functions(ctx, p)
    return [gammacalc.check_gradient_estimate(ctx.generator, s, t, us, tol, prop) for s, t in _estimate_pairs(ctx, p)]


@op("gammacalc.check_reverse_gradient_estimate", "s", "t", "functions")
def _op_reverse_estimate(ctx, p, tol):
    prop = gammacalc.build_propagator(ctx.generator)
    us = _functions(ctx, p)
    return [gammacalc.check_reverse_gradient_estimate(ctx.generator, s, t, us, tol, prop) for s, t in _estimate_pairs(ctx, p)]


@op("gammacalc.check_N_gradient_estimate", "s", "t", "N", "functions")
def _op_n_estimate(ctx, p, tol):
    prop = gammacalc.build_propagator(ctx.generator)
    us = _functions(ctx, p)
    N = _number(p.get("N"))
    return [gammacalc.check_N_gradient_estimate(ctx.generator, s, t, N, us, tol, prop) for s, t in _estimate_pairs(ctx, p)]


@op("gammacalc.find_gradient_estimate_witness")
def _op_witness(ctx, p, tol):
    witness = gammacalc.find_gradient_estimate_witness(ctx.generator, tol)
    status = "pass" if witness is None else witness["status"]
    return {"status": status, "holds": witness is None, "witness": witness}


@op("gammacalc.ricci_form", "u", "x", "t", "N", "constraint")
def _op_ricci_form(ctx, p, tol):
    t = _times(ctx, p.get("t"), "all")[0]
    L = ctx.generator.at(t)
    name = p.get("constraint", gammacalc.FORWARD_CONSTRAINT)
    if name not in gammacalc.CONSTRAINTS:
        raise ScenarioError(f"unknown gradient constraint '{name}'")
    u = np.asarray(p["u"], dtype=float)
    x = int(p["x"])
    res = gammacalc.ricci_form(L, u, x, gammacalc.CONSTRAINTS[name], _number(p.get("N")))
    return {"t": t, "state": x, "value": res.value, "unbounded": res.unbounded,
            "gamma2": float(gammacalc.gamma2(L, u)[x]), "constraint": name}


# ddi

@op("ddi.ddi_distance", "a", "b", "rounds")
def _op_ddi(ctx, p, tol):
    res = ddi.ddi_distance(ctx.instance(p.get("a")), ctx.instance(p.get("b")), p.get("rounds"), tol)
    if res.status == "stalled":
        raise NumericalFailure(f"ddi alternation stalled at {res.value:.6g}", suggestion="raise ddi_rounds")
    return res


@op("ddi.vertex_oracle", "a", "b")
def _op_oracle(ctx, p, tol):
    return ddi.vertex_oracle(ctx.instance(p.get("a")), ctx.instance(p.get("b")))


@op("ddi.check_slice_bound", "a", "b", "s")
def _op_slice(ctx, p, tol):
    A, B = ctx.instance(p.get("a")), ctx.instance(p.get("b"))
    result = ddi.ddi_distance(A, B, tol=tol)
    return [ddi.check_slice_bound(A, B, s, ddi=result, tol=tol) for s in _times(ctx, p.get("s"), "all")]


MODULES = sorted({name.split(".")[0] for name in REGISTRY})


# ------------ Validation ------------


def validate_checks(scenario: Scenario) -> None:
    for check in scenario.checks:
        entry = REGISTRY.get(check.op)
        if entry is None:
            raise ScenarioError(f"check '{check.id}': unknown op '{check.op}'")
        extra = set(check.params) - entry.params
        if extra:
            raise ScenarioError(f"check '{check.id}': invalid params {sorted(extra)} for '{check.op}'")


# ------------ Records ------------


def _status_of(result: Any) -> str:
    if isinstance(result, list):
        if not result:
            return "pass"
        return max((_status_of(r) for r in result), key=lambda s: STATUS_RANK[s])
    status = getattr(result, "status", None) if not isinstance(result, dict) else result.get("status")
    if status in STATUS_RANK:
        return status
    holds = getattr(result, "holds", None) if not isinstance(result, dict) else result.get("holds")
    if holds is None:
        return "pass"
    return "pass" if holds else "fail"


def _jsonable(result: Any) -> Any:
    if isinstance(result, BaseModel):
        return result.model_dump(mode="json")
    if is_dataclass(result):
        return _jsonable(asdict(result))
    if isinstance(result, dict):
        return {k: _jsonable(v) for k, v in result.items()}
    if isinstance(result, (list, tuple)):
        return [_jsonable(v) for v in result]
    if isinstance(result, np.ndarray):
        return result.tolist()
    if isinstance(result, np.generic):
        return result.item()
    return result


def slack_series(result: Any) -> List[SlackPoint]:
    """Plot-ready slack samples of a verdict (empty for scalar results)."""
    if isinstance(result, list):
        return [pt for r in result for pt in slack_series(r)]
    out: List[SlackPoint] = []
    if isinstance(result, srfcheck.FlowVerdict):
        out = [SlackPoint(t=result.t, pair_id=str(i), slack=s) for i, s in enumerate(result.slacks)]
    elif isinstance(result, dynconv.DynConvexityReport):
        out = [SlackPoint(t=result.t, pair_id=f"{g.endpoints[0]}-{g.endpoints[1]}", slack=g.min_slack) for g in result.geodesics]
    elif isinstance(result, dynconv.EviReport):
        out = [SlackPoint(t=s.t, pair_id=f"z{s.z}", slack=s.slack) for s in result.slacks]
    elif isinstance(result, riemann.ChartEviReport):
        out = [SlackPoint(t=s.t, pair_id="z" + ",".join(f"{c:g}" for c in s.z), slack=s.slack) for s in result.slacks]
    elif isinstance(result, gammacalc.GammaVerdict):
        out = [SlackPoint(t=result.t, pair_id=f"u{s.function}@{s.state}", tau=result.s, slack=s.slack) for s in result.samples]
        if not out:
            out = [SlackPoint(t=result.t, pair_id="form", slack=result.min_slack)]
    elif isinstance(result, riemann.TensorVerdict):
        value = result.extreme_eigenvalue if result.bound == "min" else -result.extreme_eigenvalue
        out = [SlackPoint(pair_id="extreme-eigenvalue", slack=value)]
    elif isinstance(result, riemann.ExpansionVerdict):
        inc = np.diff(result.distances)
        out = [SlackPoint(t=result.times[k + 1], pair_id=f"step{k + 1}", slack=float(v)) for k, v in enumerate(inc)]
    return out


def run_check(ctx: ScenarioContext, check: CheckSpec, timings: bool = False) -> CheckRecord:
    entry = REGISTRY[check.op]
    logger.info("check %s (%s) started", check.id, check.op)
    start = time.perf_counter()
    try:
        result = entry.run(ctx, check.params, ctx.tolerance)
    except NumericalFailure as exc:
        msg = str(exc) if exc.suggestion is None else f"{exc} (try {exc.suggestion})"
        record = CheckRecord(id=check.id, op=check.op, status="numerical_failure", message=msg)
    except (ScenarioError, ValueError, ValidationError, KeyError, TypeError) as exc:
        message = f"missing param {exc}" if isinstance(exc, KeyError) else str(exc)
        record = CheckRecord(id=check.id, op=check.op, status="error", message=message)
    except Exception as exc:  # a failing check never aborts the others
        logger.exception("check %s raised", check.id)
        record = CheckRecord(id=check.id, op=check.op, status="error", message=f"{type(exc).__name__}: {exc}")
    else:
        status = _status_of(result)
        record = CheckRecord(
            id=check.id, op=check.op, status=status, holds=status == "pass",
            result=_jsonable(result), slacks=slack_series(result),
        )
    if timings:
        record.seconds = round(time.perf_counter() - start, 6)
    logger.info("check %s finished: %s", check.id, record.status)
    return record


def exit_code(records: Sequence[CheckRecord]) -> int:
    statuses = {r.status for r in records}
    if "error" in statuses:
        return 2
    if "numerical_failure" in statuses:
        return 3
    if statuses & {"fail", "undetermined"}:
        return 1
    return 0


# ------------ Running ------------


@dataclass
class RunOptions:
    tolerance: Optional[float] = None
    threads: Optional[int] = None
    seed: Optional[int] = None
    timings: bool = False
    modules: Optional[Sequence[str]] = None


def run_scenario(scenario: Scenario, options: Optional[RunOptions] = None) -> ReportDocument:
    """Execute the checks in declared order; the report lists them in the same order."""
    options = options or RunOptions()
    validate_checks(scenario)
    ctx = ScenarioContext(scenario, tolerance=options.tolerance, seed=options.seed)
    checks = [c for c in scenario.checks if options.modules is None or c.op.split(".")[0] in options.modules]
    threads = options.threads or settings.threads
    if threads > 1 and len(checks) > 1:
        # build shared instances up front so workers only read the cache
        _warm(ctx, checks)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda c: run_check(ctx, c, options.timings), checks))
    else:
        records = [run_check(ctx, c, options.timings) for c in checks]
    uses_gamma = any(c.op.startswith("gammacalc.") for c in checks)
    return ReportDocument(
        schema_version=settings.report_schema_version,
        tool_version=__version__,
        app_name=settings.app_name,
        scenario=scenario.name,
        scenario_hash=scenario_hash(scenario),
        gradient_constraint=gammacalc.FORWARD_CONSTRAINT if uses_gamma else None,
        exit_code=exit_code(records),
        checks=records,
    )


def _warm(ctx: ScenarioContext, checks: Sequence[CheckSpec]) -> None:
    needed = {c.op.split(".")[0] for c in checks}
    for module, attr in (("srfcheck", "tdmm"), ("dynconv", "potential"), ("transport", "tdmm"),
                         ("tgs", "space"), ("gammacalc", "generator"), ("riemann", "chart")):
        if module in needed:
            try:
                getattr(ctx, attr)
            except (ScenarioError, ValueError):
                pass


def run_ddi_pair(a: Scenario, b: Scenario, options: Optional[RunOptions] = None) -> ReportDocument:
    """D_I between the instances of two scenario files, plus the slice bound at every grid time."""
    options = options or RunOptions()
    if a.instance is None or b.instance is None:
        raise ScenarioError("both scenario files need an 'instance' section")
    if a.time_grid != b.time_grid:
        raise ScenarioError("instances must share the time grid")
    merged = Scenario(
        name=f"{a.name}|{b.name}",
        time_grid=a.time_grid,
        instances={"a": a.instance, "b": b.instance},
        checks=[
            CheckSpec(id="ddi", op="ddi.ddi_distance", params={"a": "a", "b": "b"}),
            CheckSpec(id="slice-bound", op="ddi.check_slice_bound", params={"a": "a", "b": "b"}),
        ],
    )
    return run_scenario(merged, options)


# ------------ Emission ------------


CSV_COLUMNS = ("check_id", "t", "pair_id", "tau", "slack")


def render(report: ReportDocument, fmt: str = "json") -> str:
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    if fmt == "csv-slack-series":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in report.checks:
            for pt in record.slacks:
                writer.writerow([record.id, "" if pt.t is None else repr(pt.t), pt.pair_id,
                                 "" if pt.tau is None else repr(pt.tau), repr(pt.slack)])
        return buf.getvalue()
    raise ScenarioError(f"unknown format '{fmt}'")


def emit(report: ReportDocument, fmt: str = "json", out: Optional[Path] = None) -> str:
    text = render(report, fmt)
    if out is not None:
        try:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            Path(out).write_text(text)
        except OSError as exc:
            raise ScenarioError(f"cannot write report to {out}: {exc}") from exc
    return text


def load_report(text: str) -> ReportDocument:
    return ReportDocument.model_validate_json(text)
