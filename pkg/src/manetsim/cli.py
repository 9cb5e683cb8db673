"""Command line front end: run scenarios, validate configs, replay traces."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .oracle import replay_oracle
from .runner import run_scenario
from .scenario import ScenarioError, load_scenario
from .trace import Trace, TraceParseError

log = logging.getLogger("sim")


def parse_seeds(text: str) -> list[int]:
    """Accepts '7', '1..10' (inclusive) or '1,4,9'."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in text:
        return [int(s) for s in text.split(",") if s]
    return [int(text)]


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return 2
    seeds = parse_seeds(args.seeds)
    log.info("running %d seed(s) on %s", len(seeds), args.scenario)
    try:
        results = run_scenario(sc, seeds, out_dir=args.out)
    except Exception as exc:  # any aborted run fails the batch
        print(f"error: run aborted: {exc}", file=sys.stderr)
        return 1
    for r in results:
        log.info("seed %d: pdr=%.4f overhead=%.4f", r.seed,
                 r.metrics.pdr_overall, r.metrics.control_overhead_ratio)
    print(f"wrote {len(results)} run(s) to {args.out}")
    with open(os.path.join(args.out, "summary.txt")) as fh:
        print(fh.read(), end="")
    return 0


def _cmd_validate(args) -> int:
    try:
        load_scenario(args.scenario)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def _cmd_replay(args) -> int:
    try:
        trace = Trace.load(args.trace)
    except TraceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = replay_oracle(trace)
    print(report.render(), end="")
    return 0 if report.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Ad hoc network simulator with agent-based defense")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario over one or more seeds")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seeds", required=True,
                       help="seed, a..b range, or comma list")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_rep = sub.add_parser("replay", help="verify a trace with the replayer")
    p_rep.add_argument("--trace", required=True)
    p_rep.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    # SIM_LOG tunes verbosity only; it never changes behaviour.
    level = os.environ.get("SIM_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
