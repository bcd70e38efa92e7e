"""Command-line front end: run or validate a scenario."""

from __future__ import annotations

import argparse
import logging
import sys

from .orchestrator import export_logs, run_simulation
from .scenario import ScenarioError, load_scenario


def _add_scenario_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scenario",
        required=True,
        help="preset name (use_case_1, use_case_2), JSON file path, or JSON text",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intersim")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and export CSV logs")
    _add_scenario_arg(sim)
    sim.add_argument("--steps", type=int, default=None, help="override the configured step count")
    sim.add_argument("--out", required=True, help="output directory for the CSV logs")
    sim.add_argument("--topology", default=None, help="override: complete, ring, or an arc-list JSON file")
    sim.add_argument("--workers", type=int, default=1, help="parallel per-agent solver workers")

    chk = sub.add_parser("check", help="validate a scenario without running it")
    _add_scenario_arg(chk)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1

    if args.command == "check":
        print(
            f"ok: {len(cfg.agents)} agents, T_s={cfg.t_s}s, horizon={cfg.horizon}, "
            f"steps={cfg.steps}, topology={cfg.topology}"
        )
        return 0

    from dataclasses import replace

    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    if args.topology is not None:
        if args.topology in ("complete", "ring"):
            cfg = replace(cfg, topology=args.topology)
        else:
            import json

            arcs = tuple(tuple(a) for a in json.loads(open(args.topology).read()))
            cfg = replace(cfg, topology=arcs)

    sim_log, timing = run_simulation(cfg, workers=args.workers)
    files = export_logs(sim_log, timing, args.out)
    violations = sim_log.overlap_violations
    print(f"wrote {', '.join(str(f) for f in files)}")
    print(f"steps={cfg.steps} agents={len(cfg.agents)} overlap_violations={violations}")
    if sim_log.speed_clamps:
        print(f"speed clamps: {len(sim_log.speed_clamps)}")
    return 0 if violations == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
