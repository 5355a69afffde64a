"""Command-line front end.

Exit codes:
    0  success
    2  usage error (bad flags, unknown built-in scenario name)
    3  scenario document is not well-formed JSON
    4  scenario or override violates a model invariant
    5  simulation guard tripped (event cap or internal consistency check)
    6  I/O error reading or writing files
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import scenarios
from .analysis import analyze_scenario
from .engine import SimulationGuardError, run
from .model import (
    FORMAT_VERSION,
    ContentionMode,
    SchedulerMode,
    ScenarioSyntaxError,
    ScenarioValidationError,
    load_scenario,
    num,
    render_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SYNTAX = 3
EXIT_INVALID = 4
EXIT_GUARD = 5
EXIT_IO = 6


class CliError(Exception):
    def __init__(self, code, msg):
        self.code = code
        super().__init__(msg)


def _add_overrides(p):
    p.add_argument("--scheduler", choices=[m.value for m in SchedulerMode])
    p.add_argument("--rho", type=Fraction, help="TFS punishment factor")
    p.add_argument("--budget-bytes", type=int, dest="budget", help="per-core throttle budget per period")
    p.add_argument("--duration-ms", type=Fraction, dest="duration")
    p.add_argument("--alpha", type=Fraction, help="linear slowdown coefficient")
    p.add_argument("--slowdown-mode", choices=[m.value for m in ContentionMode])


def apply_overrides(scenario, args):
    """Scenario with any command-line overrides applied and re-validated."""
    kw = {}
    if args.scheduler:
        kw["scheduler"] = SchedulerMode(args.scheduler)
    if args.rho is not None:
        kw["tfs_rho"] = args.rho
    if args.budget is not None:
        kw["throttle_budget"] = args.budget
    if args.duration is not None:
        kw["sim_duration"] = args.duration
    if args.alpha is not None or args.slowdown_mode:
        sd = scenario.config.slowdown
        kw["slowdown"] = type(sd)(
            mode=ContentionMode(args.slowdown_mode) if args.slowdown_mode else sd.mode,
            alpha=sd.alpha if args.alpha is None else args.alpha,
            bw_ref=sd.bw_ref,
        )
    return scenario.with_overrides(**kw) if kw else scenario


def _load(path):
    try:
        return load_scenario(path)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read {path}: {e.strerror}") from None


def _write(path, text):
    try:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {path}: {e.strerror}") from None


def _summary(metrics):
    return {
        "scheduler": metrics.scheduler,
        "rho": num(metrics.rho),
        "system_throttle_time_ms": num(metrics.system_throttle_time),
        "gpu_slowdown": None if metrics.gpu_slowdown() is None else float(metrics.gpu_slowdown()),
        "scheduled_periods": {k: v["scheduled_periods"] for k, v in sorted(metrics.be_tasks.items())},
    }


def cmd_simulate(args):
    sc = apply_overrides(_load(args.scenario), args)
    trace, metrics = run(sc)
    _write(os.path.join(args.out, "trace.csv"), trace.to_csv())
    _write(os.path.join(args.out, "metrics.json"), metrics.to_json())
    print(json.dumps(_summary(metrics), sort_keys=True))
    return EXIT_OK


def cmd_analyze(args):
    doc = analyze_scenario(_load(args.scenario))
    doc["format_version"] = FORMAT_VERSION
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_paper_scenario(args):
    try:
        sc = scenarios.builtin(args.name)
    except KeyError as e:
        raise CliError(EXIT_USAGE, e.args[0]) from None
    text = render_scenario(sc)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


SWEEP_COLUMNS = ("scenario", "axis", "value", "scheduler", "rho", "budget_bytes",
                 "gpu_slowdown", "system_throttle_ms")


def sweep_points(base, budget_halving=None, rho_list=None):
    """``(axis, value, scenario)`` for each point of the requested axis."""
    if budget_halving and rho_list:
        raise CliError(EXIT_USAGE, "choose one sweep axis")
    if budget_halving:
        q0 = base.config.throttle_budget
        out = []
        for k in range(budget_halving):
            q = q0 >> k
            if q < 1:
                break
            out.append(("budget_bytes", q, base.with_overrides(throttle_budget=q)))
        return out
    if rho_list:
        return [("rho", r, base.with_overrides(scheduler=SchedulerMode.TFS, tfs_rho=r)) for r in rho_list]
    return [("none", "", base)]


def _run_point(task):
    label, axis, value, sc = task
    _, metrics = run(sc)
    slow = metrics.gpu_slowdown()
    row = {
        "scenario": label, "axis": axis, "value": value if value == "" else num(value),
        "scheduler": sc.scheduler.value, "rho": num(sc.rho), "budget_bytes": sc.config.throttle_budget,
        "gpu_slowdown": "" if slow is None else f"{float(slow):.6f}",
        "system_throttle_ms": f"{float(metrics.system_throttle_time):.6f}",
    }
    return row, metrics.to_json()


def run_sweep(bases, budget_halving=None, rho_list=None, jobs=1):
    """Run every sweep point of every base scenario; rows come back in axis order."""
    tasks = []
    for label, base in bases:
        for axis, value, sc in sweep_points(base, budget_halving, rho_list):
            tasks.append((label, axis, value, sc))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]
    return results


def cmd_sweep(args):
    if args.random_tasksets:
        gen = scenarios.random_scenarios("throttle", args.random_tasksets, args.seed)
        bases = [(f"random{i:03d}", apply_overrides(sc, args)) for i, sc in enumerate(gen)]
    elif args.scenario:
        bases = [(os.path.splitext(os.path.basename(args.scenario))[0], apply_overrides(_load(args.scenario), args))]
    else:
        raise CliError(EXIT_USAGE, "sweep needs a scenario file or --random-tasksets")
    results = run_sweep(bases, args.budget_halving, args.rho_list, args.jobs)
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION}\n")
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for i, (row, metrics_json) in enumerate(results):
        w.writerow(row)
        _write(os.path.join(args.out, "points", f"{i:04d}_{row['scenario']}.json"), metrics_json)
    _write(os.path.join(args.out, "sweep.csv"), buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _rho_list(text):
    try:
        return [Fraction(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="bwlocksim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario, write trace.csv and metrics.json")
    p.add_argument("scenario")
    _add_overrides(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="response-time analysis of a scenario's RT tasks")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("paper-scenario", help="emit a built-in scenario document")
    p.add_argument("name", help=", ".join(sorted(scenarios.BUILTIN)))
    p.add_argument("--out")
    p.set_defaults(func=cmd_paper_scenario)

    p = sub.add_parser("sweep", help="run a scenario across budgets or punishment factors")
    p.add_argument("scenario", nargs="?")
    _add_overrides(p)
    p.add_argument("--budget-halving", type=int, metavar="N", help="N points, halving the budget each time")
    p.add_argument("--rho-list", type=_rho_list, metavar="R1,R2,...")
    p.add_argument("--random-tasksets", type=int, metavar="N", help="sweep N generated scenarios")
    p.add_argument("--seed", type=int, default=0, help="seed for --random-tasksets")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep-out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"bwlocksim: {e}", file=sys.stderr)
        return e.code
    except ScenarioSyntaxError as e:
        print(f"bwlocksim: syntax error: {e}", file=sys.stderr)
        return EXIT_SYNTAX
    except ScenarioValidationError as e:
        print(f"bwlocksim: invalid scenario: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationGuardError, AssertionError) as e:
        print(f"bwlocksim: simulation aborted: {e}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
