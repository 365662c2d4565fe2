# tests/test_runner.py
import csv
import io
import math

import pytest

from app.errors import ScenarioError
from app.runner import (
    CSV_COLUMNS,
    MODULES,
    RunOptions,
    exit_code,
    load_report,
    render,
    run_ddi_pair,
    run_scenario,
    validate_checks,
)
from app.scenario import bundled_scenarios, load_scenario, parse_scenario
from app.schemas import CheckRecord, Scenario

CIRCLE = {"name": "circle", "time_grid": {"stop": 0.2, "steps": 2}, "space": {"kind": "cycle", "n": 16}}


def scenario(checks, **sections):
    raw = {**CIRCLE, **sections, "checks": checks}
    return Scenario.model_validate(raw)


def bundled(name):
    return load_scenario(next(p for p in bundled_scenarios() if p.stem == name))


def strong(check_id="strong", pairs=None):
    return {"id": check_id, "op": "srfcheck.check_super_ricci_strong",
            "params": {"pairs": pairs or [[0, 4], [0, 8]]}}


# ------------ bundled scenarios ------------


def test_every_bundled_scenario_validates():
    paths = bundled_scenarios()
    assert len(paths) >= 5
    for path in paths:
        validate_checks(load_scenario(path))


def test_flat_circle_passes():
    report = run_scenario(bundled("flat-circle-static"))
    assert report.exit_code == 0
    assert [r.id for r in report.checks] == ["controls", "w2-antipodal", "strong", "super-N"]
    assert all(r.status == "pass" for r in report.checks)
    w2 = report.checks[1].result
    assert w2["value"] == pytest.approx(math.pi, rel=1e-9)


def test_shrinking_circle_fails():
    report = run_scenario(bundled("shrinking-circle-wrong-sign"))
    assert report.exit_code == 1
    record = report.checks[0]
    assert record.status == "fail" and record.holds is False
    assert min(pt.slack for pt in record.slacks) == pytest.approx(-math.pi ** 2, rel=1e-9)


@pytest.mark.parametrize("name", ["shrinking-sphere", "two-point-markov", "two-point-mm-spaces"])
def test_other_bundled_scenarios_pass(name):
    report = run_scenario(bundled(name))
    assert report.exit_code == 0, [(r.id, r.status, r.message) for r in report.checks]


def test_gamma_scenarios_record_the_constraint():
    assert run_scenario(bundled("two-point-markov")).gradient_constraint is not None
    assert run_scenario(bundled("flat-circle-static")).gradient_constraint is None


# ------------ validation ------------


def test_empty_checks_pass():
    report = run_scenario(scenario([]))
    assert report.exit_code == 0 and report.checks == []


def test_unknown_op_and_params():
    with pytest.raises(ScenarioError, match="unknown op"):
        run_scenario(scenario([{"id": "x", "op": "srfcheck.nope"}]))
    with pytest.raises(ScenarioError, match="invalid params"):
        validate_checks(scenario([{"id": "x", "op": "tgs.estimate_controls", "params": {"t": 0.1}}]))


def test_duplicate_ids_and_bad_json():
    with pytest.raises(ScenarioError, match="duplicate"):
        parse_scenario('{"name": "d", "time_grid": {"stop": 1, "steps": 1},'
                       ' "checks": [{"id": "a", "op": "x"}, {"id": "a", "op": "y"}]}')
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{"name": "d",\n  "time_grid": }')
    assert info.value.line == 2


def test_schema_errors_point_at_the_source():
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{"name": "d",\n  "time_grid": {"steps": 2, "stop": 1.0, "stepz": 2}}')
    assert (info.value.line, info.value.column) == (2, 42)
    assert "time_grid.stepz" in str(info.value)
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{"name": "d", "time_grid": {"stop": 1, "steps": 1},\n "checks": [{"id": "a", "op": "x"},\n {"id": "b", "op": "y", "oops": 1}]}')
    assert (info.value.line, info.value.column) == (3, 25)
    with pytest.raises(ScenarioError, match="no source position") as info:
        parse_scenario('{"time_grid": {"stop": 1, "steps": 1}}')
    assert info.value.line is None


# ------------ execution ------------


def test_failing_check_does_not_stop_the_others():
    s = Scenario.model_validate({
        "name": "gen-only",
        "time_grid": {"stop": 0.5, "steps": 5},
        "generator": {"kind": "two-point"},
        "checks": [strong(), {"id": "bochner", "op": "gammacalc.check_srf_gamma"}],
    })
    report = run_scenario(s)
    assert report.checks[0].status == "error"
    assert "space" in report.checks[0].message
    assert report.checks[1].status == "pass"
    assert report.exit_code == 2


def test_stiff_generator_is_a_numerical_failure():
    s = Scenario.model_validate({
        "name": "stiff",
        "time_grid": {"stop": 1.0, "steps": 1},
        "generator": {"kind": "circle-laplacian", "n": 64},
        "checks": [{"id": "estimate", "op": "gammacalc.check_gradient_estimate"}],
    })
    report = run_scenario(s)
    record = report.checks[0]
    assert record.status == "numerical_failure"
    assert "rk4_substeps" in record.message
    assert report.exit_code == 3


def test_gamma_forms_default_to_times_after_the_first():
    # e^{3.9 t} on the two-point space is a super-Ricci flow; t = 0 only has a forward difference
    s = Scenario.model_validate({
        "name": "growth",
        "time_grid": {"stop": 1.0, "steps": 16},
        "generator": {"kind": "two-point", "scale": "exp(3.9*t)"},
        "checks": [
            {"id": "bochner", "op": "gammacalc.check_srf_gamma"},
            {"id": "start", "op": "gammacalc.check_srf_gamma", "params": {"t": 0.0}},
            {"id": "witness", "op": "gammacalc.find_gradient_estimate_witness"},
        ],
    })
    report = run_scenario(s)
    assert [r.status for r in report.checks] == ["pass", "undetermined", "undetermined"]
    assert len(report.checks[0].result) == 16
    assert report.checks[2].result["witness"]["violated_times"] == [0.0]
    assert report.exit_code == 1


def test_exit_code_precedence():
    def rec(status):
        return CheckRecord(id=status, op="x.y", status=status)

    assert exit_code([rec("pass")]) == 0
    assert exit_code([rec("pass"), rec("undetermined")]) == 1
    assert exit_code([rec("fail"), rec("numerical_failure")]) == 3
    assert exit_code([rec("numerical_failure"), rec("error")]) == 2


def test_module_filter():
    s = bundled("flat-circle-static")
    report = run_scenario(s, RunOptions(modules=("srfcheck",)))
    assert [r.id for r in report.checks] == ["strong", "super-N"]
    assert "srfcheck" in MODULES and "ddi" in MODULES


def test_runs_are_deterministic():
    s = bundled("flat-circle-static")
    assert render(run_scenario(s)) == render(run_scenario(s))


def test_threads_match_sequential_order():
    s = bundled("flat-circle-static")
    seq = run_scenario(s)
    par = run_scenario(s, RunOptions(threads=2))
    assert render(par) == render(seq)


def test_timings_only_on_request():
    s = scenario([strong()])
    assert run_scenario(s).checks[0].seconds is None
    assert run_scenario(s, RunOptions(timings=True)).checks[0].seconds >= 0.0


def test_tolerance_override_reaches_verdicts():
    report = run_scenario(scenario([strong()]), RunOptions(tolerance=1e-3))
    assert all(v["tolerance"] == 1e-3 for v in report.checks[0].result)


# ------------ emission ------------


def test_json_round_trip():
    report = run_scenario(bundled("shrinking-circle-wrong-sign"))
    again = load_report(render(report, "json"))
    assert again == report
    assert again.scenario_hash == report.scenario_hash


def test_csv_slack_series():
    report = run_scenario(bundled("flat-circle-static"))
    rows = list(csv.reader(io.StringIO(render(report, "csv-slack-series"))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + sum(len(r.slacks) for r in report.checks)
    assert {row[0] for row in rows[1:]} == {"strong", "super-N"}


def test_unknown_format():
    with pytest.raises(ScenarioError):
        render(run_scenario(scenario([])), "xml")


# ------------ D_I between two files ------------


def instance_scenario(name, delta, grid=None):
    return Scenario.model_validate({
        "name": name,
        "time_grid": grid or {"stop": 1.0, "steps": 4},
        "instance": {"distances": [[0.0, delta], [delta, 0.0]]},
    })


def test_ddi_pair():
    report = run_ddi_pair(instance_scenario("a", 1.0), instance_scenario("b", 1.5))
    assert report.scenario == "a|b"
    assert [r.id for r in report.checks] == ["ddi", "slice-bound"]
    assert report.checks[0].result["value"] == pytest.approx(0.25, rel=0.05)
    assert len(report.checks[1].result) == 5
    assert report.exit_code == 0


def test_ddi_pair_needs_instances_on_one_grid():
    with pytest.raises(ScenarioError, match="instance"):
        run_ddi_pair(instance_scenario("a", 1.0), scenario([]))
    with pytest.raises(ScenarioError, match="time grid"):
        run_ddi_pair(instance_scenario("a", 1.0), instance_scenario("b", 1.5, {"stop": 1.0, "steps": 2}))
