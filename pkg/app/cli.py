# app/cli.py
"""
Command-line front end.

  verify <scenario>     run every check of the scenario
  ot | gamma | riemann  run only the checks of the matching library modules
  ddi <a> <b>           D_I between two instance files plus the slice bounds
  schema                print the JSON schema of the report document

Exit status: 0 all pass, 1 a violation (or undetermined), 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from app import __version__
from app.errors import NumericalFailure, ScenarioError
from app.runner import RunOptions, emit, run_ddi_pair, run_scenario
from app.scenario import load_scenario
from app.schemas import ReportDocument
from app.settings import settings

logger = logging.getLogger(__name__)

MODULE_FILTERS = {
    "verify": None,
    "ot": ("transport", "srfcheck", "dynconv", "tgs", "convexity1d"),
    "gamma": ("gammacalc",),
    "riemann": ("riemann",),
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=None, help="Override the scenario tolerance.")
    parser.add_argument("--format", choices=("json", "csv-slack-series"), default="json")
    parser.add_argument("--out", type=Path, default=None, help="Write the report here instead of stdout.")
    parser.add_argument("--threads", type=int, default=None, help="Run checks on a thread pool.")
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    parser.add_argument("--timings", action="store_true", help="Record wall-clock seconds per check.")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricciflow-verify",
        description="Numerical verification of super-Ricci flow characterizations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in MODULE_FILTERS:
        p = sub.add_parser(name, help=f"run {'all' if name == 'verify' else name} checks of a scenario")
        p.add_argument("scenario", type=Path)
        _common(p)
    p = sub.add_parser("ddi", help="D_I distance between two instance files")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    _common(p)
    sub.add_parser("schema", help="print the report JSON schema")
    return parser


def _options(args: argparse.Namespace) -> RunOptions:
    modules = MODULE_FILTERS.get(args.command)
    return RunOptions(
        tolerance=args.tol, threads=args.threads, seed=args.seed, timings=args.timings, modules=modules,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(json.dumps(ReportDocument.model_json_schema(), indent=2) + "\n")
        return 0

    level = "DEBUG" if args.verbose else settings.effective_log_level
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        if args.command == "ddi":
            report = run_ddi_pair(load_scenario(args.a), load_scenario(args.b), _options(args))
        else:
            report = run_scenario(load_scenario(args.scenario), _options(args))
        text = emit(report, args.format, args.out)
    except ScenarioError as exc:
        logger.error("%s", exc)
        return 2
    except NumericalFailure as exc:
        logger.error("%s", exc)
        return 3
    if args.out is None:
        sys.stdout.write(text)
    else:
        logger.info("report written to %s", args.out)
    return report.exit_code


def run(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))
