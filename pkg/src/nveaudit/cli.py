"""Command line entry point: ``nveaudit {run,audit-demo,detect,selftest}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .client import CheatKind, CheatProfile
from .harness import (
    InvariantViolation,
    ScenarioError,
    _strategy,
    detection_experiment,
    parse_scenario,
    run,
    tunnel_scenario,
)
from .netsim import FabricError


def _apply_overrides(sc, args):
    changes = {}
    for name in ("seed", "cycles", "l", "drop"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "audit_strategy", None):
        seed = args.seed if args.seed is not None else sc.audit.seed
        changes["audit"] = _strategy(args.audit_strategy, seed, None)
    return replace(sc, **changes) if changes else sc


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    sc = _apply_overrides(parse_scenario(Path(args.scenario).read_text()), args)
    metrics = run(sc)
    _emit(metrics.lines(), args.out)
    return 1 if metrics.violations else 0


def cmd_audit_demo(args) -> int:
    cheat = CheatProfile(CheatKind.WALLHACK, args.cheat_cycle)
    sc = _apply_overrides(tunnel_scenario(cheat), args)
    metrics = run(sc)
    alice = sc.client_ids()["alice"]
    lines = [
        "tunnel map (alice starts in the left room, bob in the right):",
        sc.grid.to_ascii(),
        f"alice jumps through the wall in cycle {args.cheat_cycle}; the state server",
        "only sees a move between adjacent regions and accepts it.",
    ]
    lines += [f"  client log: cycle {c}: {msg}" for c, msg in metrics.clients[alice].log]
    for rep in metrics.reports_for("alice"):
        reasons = ", ".join(f"{check}@{cycle}" for check, cycle in rep.reason_keys()) or "-"
        lines.append(f"  audit t0={rep.t0:<4} window=({rep.ta},{rep.t0}]  {rep.verdict.value:<6} {reasons}")
    first = metrics.first_reject("alice")
    lines.append(
        f"first rejection at t0={first.t0}" if first else "the cheat went undetected"
    )
    _emit(lines, args.out)
    return 1 if metrics.violations else 0


def cmd_detect(args) -> int:
    lines = []
    for q in args.q:
        res = detection_experiment(q, args.trials, args.l or 10, args.cycles, args.seed or 0)
        lines.append(json.dumps({
            "type": "detection", "q": q, "trials": res.trials, "detected": res.detected,
            "rate": round(res.rate, 6), "analytic": round(res.analytic, 6),
        }, sort_keys=True))
    _emit(lines, args.out)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    _emit([f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in results], args.out)
    return 0 if all(ok for _, ok in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nveaudit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cycles_default=None):
        p.add_argument("--seed", type=int)
        p.add_argument("--cycles", type=int, default=cycles_default)
        p.add_argument("--l", type=int)
        p.add_argument("--out")

    p = sub.add_parser("run", help="simulate a scenario file, print JSON lines")
    p.add_argument("scenario")
    common(p)
    p.add_argument("--drop", type=float)
    p.add_argument("--audit-strategy", help="every | random:Q | ondemand:C1,C2")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit-demo", help="walk through the tunnel attack")
    common(p)
    p.add_argument("--drop", type=float)
    p.add_argument("--audit-strategy")
    p.add_argument("--cheat-cycle", type=int, default=37)
    p.set_defaults(func=cmd_audit_demo)

    p = sub.add_parser("detect", help="Monte Carlo detection probability")
    common(p)
    p.add_argument("--q", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.9])
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FabricError, OSError) as e:
        print(f"nveaudit: {e}", file=sys.stderr)
        return 2
    except InvariantViolation as e:
        print(f"nveaudit: invariant violated: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
