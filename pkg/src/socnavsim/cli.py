"""Command line entry point: run, validate, eval, list-nodes, list-metrics, serve.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import bridge
from .bt import default_registry
from .evaluator import METRICS, evaluate, load_log, write_report
from .harness import RunConfig, SimulationError, parse_policy, run
from .scenario_io import ScenarioError, load_scenario

OUT_ENV = bridge.OUT_ENV


def _record(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}") from None


def _metrics(text: str):
    if text == "all":
        return "all"
    return tuple(n.strip() for n in text.split(",") if n.strip())


def _policy(text: str):
    try:
        return parse_policy(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socnavsim", description="Headless human navigation simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write the report")
    r.add_argument("--scenario", required=True)
    r.add_argument("--dt", type=float)
    r.add_argument("--duration", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--robot-policy", type=_policy,
                   help="static | straight:VX,VY | waypoints:X,Y;X,Y@SPEED | replay:FILE")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./socnavsim_out)")
    r.add_argument("--metrics", type=_metrics, help="comma separated names or 'all'")
    r.add_argument("--record", type=_record, action="append", default=[],
                   help="metrics window START:STOP in seconds; repeatable")

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)

    e = sub.add_parser("eval", help="recompute metrics from saved run files")
    e.add_argument("--log", required=True, help="trajectories.csv")
    e.add_argument("--events", help="events.csv")
    e.add_argument("--metrics", type=_metrics, default="all")
    e.add_argument("--scenario", help="scenario file, for the map")
    e.add_argument("--out", help="write metrics.yaml here instead of printing")

    sub.add_parser("list-nodes", help="print the behavior tree leaf catalog")
    sub.add_parser("list-metrics", help="print the metric registry")

    s = sub.add_parser("serve", help="run the NDJSON bridge")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--tcp", type=int, metavar="PORT")
    g.add_argument("--stdio", action="store_true")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--out", help="report directory used by 'finish'")
    return p


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "socnavsim_out"))


def cmd_run(a) -> int:
    out = Path(a.out) if a.out else _default_out()
    cfg = RunConfig(a.scenario, dt=a.dt, duration=a.duration, seed=a.seed, metrics=a.metrics,
                    out_dir=out, robot_policy=a.robot_policy, record=tuple(a.record))
    _, reports = run(cfg)
    for rep in reports:
        print(f"window {rep.window[0]:g}..{rep.window[1]:g}")
        for name, entry in rep.entries.items():
            val = "n/a" if entry.value is None else f"{entry.value:.6g}"
            print(f"  {name}: {val} {entry.unit}")
    print(f"report written to {out}")
    return 0


def cmd_validate(a) -> int:
    s = load_scenario(a.scenario)
    print(f"ok: {len(s.agents)} agent(s), dt={s.dt}, duration={s.duration}")
    return 0


def cmd_eval(a) -> int:
    grid = load_scenario(a.scenario).load_grid() if a.scenario else None
    log = load_log(a.log, a.events, grid=grid)
    reports = evaluate(log, None, a.metrics, {"dt": log.dt})
    if a.out:
        write_report(reports, log, a.out)
        # keep the input logs untouched when writing next to them
        print(f"metrics written to {Path(a.out) / 'metrics.yaml'}")
        return 0
    for rep in reports:
        print(f"window {rep.window[0]:g}..{rep.window[1]:g}")
        for name, entry in rep.entries.items():
            val = "n/a" if entry.value is None else repr(entry.value)
            print(f"  {name}: {val}")
    return 0


def cmd_list_nodes(a) -> int:
    reg = default_registry()
    for name in sorted(reg):
        spec = reg[name]
        params = ", ".join(f"{k}:{t}" for k, (t, _) in spec.params.items())
        print(f"{spec.kind:9s} {name}({params})")
    for alias, target in sorted(reg.aliases.items()):
        print(f"alias     {alias} -> {target}")
    return 0


def cmd_list_metrics(a) -> int:
    for m in METRICS.values():
        print(f"{m.name}\t{m.unit}\t{m.definition_id}")
    return 0


def cmd_serve(a) -> int:
    if a.stdio:
        bridge.serve_stdio(out_dir=a.out)
    else:
        bridge.serve_tcp(a.host, a.tcp, out_dir=a.out,
                         ready=lambda port: print(f"listening on {a.host}:{port}", file=sys.stderr,
                                                  flush=True))
    return 0


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "eval": cmd_eval,
    "list-nodes": cmd_list_nodes,
    "list-metrics": cmd_list_metrics,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return COMMANDS[a.command](a)
    except (ScenarioError, SimulationError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
