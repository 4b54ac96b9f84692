"""Command line entry point: ``safedual run --config case.json --mode dual --out results``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .estimation import InconsistentDataError
from .harness import (
    InfeasibleMissionError,
    RunConfig,
    emit_mc,
    emit_reports,
    run_baseline,
    run_dual,
    run_monte_carlo,
)
from .planners import PlannerError
from .tubes import InfeasibleTighteningError
from .widthlp import SolverError

EXIT_OK = 0
EXIT_SAFETY = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

U64_MAX = 2**64 - 1


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safedual", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more detail")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a mission and write reports")
    run.add_argument("--config", required=True, help="JSON run configuration")
    run.add_argument("--mode", choices=("baseline", "dual", "mc"), default="dual")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=_seed, default=None, help="RNG seed (unsigned 64-bit); overrides the config")
    run.add_argument("--strict-prop1", action="store_true",
                     help="replay the plan as the executed trajectory when checking the width prediction")
    run.add_argument("--runs", type=int, default=None, help="number of seeds in mc mode")
    run.add_argument("--no-figures", action="store_true", help="skip the PNG renderings")
    return parser


def _run(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    figures = not args.no_figures
    if args.mode == "baseline":
        report = run_baseline(cfg, seed)
        emit_reports(report, args.out, figures=figures)
        reports = [report]
    elif args.mode == "dual":
        report = run_dual(cfg, seed, strict=args.strict_prop1)
        emit_reports(report, args.out, figures=figures)
        reports = [report]
    else:
        reports = run_monte_carlo(cfg, seed, args.runs, strict=args.strict_prop1)
        emit_mc(reports, args.out, figures=figures)
    for r in reports:
        s = r.summary()
        print(f"{s['name']} {s['mode']} seed={s['seed']} cost={s['cost_percent']:.2f}% "
              f"reduction={[round(v, 1) for v in s['width_reduction_percent']]} violations={s['safety_violations']}")
    return EXIT_SAFETY if any(r.safety_violations for r in reports) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (InfeasibleTighteningError, InfeasibleMissionError) as exc:
        print(f"infeasible mission: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PlannerError, SolverError, InconsistentDataError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
