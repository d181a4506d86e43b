"""Batch experiment front-end.

Each subcommand loads a scenario, fans the runs out over a seed range, and
writes one deterministic artifact (JSON or CSV): re-running with identical
flags reproduces identical bytes.  Every artifact embeds the scenario's
config digest so result tables stay traceable to their inputs.  The env var
BTCRS_THREADS caps the number of seed workers.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import statistics
import sys
from pathlib import Path

from . import engine, metrics, planner, synth
from . import topology as tp

USAGE_ERR, SCENARIO_ERR, RUNTIME_ERR = 2, 3, 4

_REPO_ROOT = Path(__file__).resolve().parents[2]


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep errors single-line and machine-parsable
        raise _CliError(USAGE_ERR, message)


def _parse_seeds(text: str) -> list[int]:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise _CliError(USAGE_ERR, f"bad --seeds {text!r}: expected N or A..B") from None
    if hi < lo:
        raise _CliError(USAGE_ERR, f"bad --seeds {text!r}: empty range")
    return list(range(lo, hi + 1))


def _parse_overrides(pairs: list[str]) -> dict:
    known = set(engine.SimParams.__dataclass_fields__)
    overrides = {}
    for pair in pairs:
        key, eq, value = pair.partition("=")
        if not eq:
            raise _CliError(USAGE_ERR, f"bad --set {pair!r}: expected key=value")
        if key not in known:
            raise _CliError(USAGE_ERR, f"unknown parameter {key!r}; valid: {', '.join(sorted(known))}")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def _load_scenario(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise _CliError(SCENARIO_ERR, f"scenario not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise _CliError(SCENARIO_ERR, f"{p}: not valid JSON ({exc})") from None


def _default_scenario(name: str) -> Path:
    for cand in (_REPO_ROOT / "scenarios" / name, Path("scenarios") / name):
        if cand.exists():
            return cand
    raise _CliError(USAGE_ERR, f"--scenario is required (no bundled {name} found)")


def _write(out, data: bytes) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config", "seed", "metric", "value"])
    writer.writerows(rows)
    return buf.getvalue().encode()


def _report_job(raw: dict, seed: int, overrides: dict | None):
    return metrics.summarize(engine.run_scenario(raw, seed, overrides))


# -- subcommands ---------------------------------------------------------------


def _cmd_run(args) -> int:
    raw = _load_scenario(args.scenario)
    overrides = _parse_overrides(args.set)
    seeds = _parse_seeds(args.seeds)
    reports = engine._map_tasks(_report_job, [(raw, s, overrides) for s in seeds])
    _write(args.out, metrics.emit(reports, args.format))
    return 0


def _cmd_plan_partition(args) -> int:
    raw = _load_scenario(args.scenario)
    try:
        lo_s, hi_s = args.power.split(":", 1)
        lo, hi = float(lo_s), float(hi_s)
    except ValueError:
        raise _CliError(USAGE_ERR, f"bad --power {args.power!r}: expected LO:HI") from None
    if not (0 <= lo <= hi <= 1):
        raise _CliError(USAGE_ERR, f"bad --power {args.power!r}: need 0 <= LO <= HI <= 1")
    topo = tp.load_topology(raw)
    plans = planner.enumerate_power_partitions(topo, lo, hi)
    body = [dict(p.to_dict(), config=topo.config_digest()) for p in plans]
    _write(args.out, (json.dumps(body, sort_keys=True, indent=2) + "\n").encode())
    return 0


def _cmd_heal(args) -> int:
    raw = _load_scenario(args.scenario)
    overrides = _parse_overrides(args.set)
    seeds = _parse_seeds(args.seeds)
    digest = tp.load_topology(raw).config_digest()
    results = engine.run_healing_seeds(raw, seeds, args.onpath, overrides)
    results.sort(key=lambda r: r.seed)
    body = {
        "config": digest,
        "onpath": args.onpath,
        "results": [r.to_dict() for r in results],
        "mean_final_ratio": statistics.mean(r.final_ratio for r in results),
    }
    _write(args.out, (json.dumps(body, sort_keys=True, indent=2) + "\n").encode())
    return 0


def _cmd_delay_node(args) -> int:
    raw = _load_scenario(args.scenario)
    attack = raw.get("attack")
    if not attack or attack.get("kind") != "delay" or not attack.get("target"):
        raise _CliError(SCENARIO_ERR, "delay-node needs a scenario with a single-victim delay attack")
    overrides = _parse_overrides(args.set)
    seeds = _parse_seeds(args.seeds)
    try:
        fractions = [float(x) for x in args.interception.split(",")]
    except ValueError:
        raise _CliError(USAGE_ERR, f"bad --interception {args.interception!r}: expected comma-separated fractions") from None
    rows = []
    for f in fractions:
        scn = copy.deepcopy(raw)
        scn["attack"].setdefault("params", {})["interception"] = f
        digest = tp.load_topology(scn).config_digest()
        reports = engine._map_tasks(_report_job, [(scn, s, overrides) for s in seeds])
        for rep in reports:
            if not rep.uninformed:
                raise _CliError(RUNTIME_ERR, "scenario has no attack-free reference node named 'ref'")
            (value,) = rep.uninformed.values()
            rows.append((f"{digest}:interception={f}", rep.seed, "uninformed_fraction", value))
    _write(args.out, _csv_bytes(rows))
    return 0


def _cmd_multihoming_sweep(args) -> int:
    path = args.scenario or _default_scenario("paperlike.scn")
    raw = _load_scenario(path)
    overrides = _parse_overrides(args.set)
    seeds = _parse_seeds(args.seeds)
    try:
        degrees = [int(x) for x in args.degrees.split(",")]
    except ValueError:
        raise _CliError(USAGE_ERR, f"bad --degrees {args.degrees!r}: expected comma-separated integers") from None
    rows = []
    for d in degrees:
        scn = synth.adjust_pool_degree(raw, d)
        scn["attack"] = {
            "kind": "delay",
            "target": [],
            "params": {"coalition": args.coalition, "interception": 1.0},
        }
        digest = tp.load_topology(scn).config_digest()
        reports = engine._map_tasks(_report_job, [(scn, s, overrides) for s in seeds])
        for rep in reports:
            rows.append((f"{digest}:degree={d}", rep.seed, "orphan_rate", rep.orphan_rate))
    _write(args.out, _csv_bytes(rows))
    return 0


# -- wiring ---------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="btcrs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--seeds", default="0..19", help="seed range A..B (inclusive) or single seed")
        sp.add_argument("--out", default=None, help="output file (default: stdout)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a simulation parameter")

    sp = sub.add_parser("run", help="simulate a scenario over a seed range")
    common(sp)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("plan-partition", help="enumerate isolatable pool partitions by hash power")
    common(sp)
    sp.add_argument("--power", required=True, metavar="LO:HI", help="hash-power window, e.g. 0.45:0.55")
    sp.set_defaults(func=_cmd_plan_partition)

    sp = sub.add_parser("heal", help="partition, lift, and watch connectivity recover")
    common(sp)
    sp.add_argument("--onpath", type=float, default=0.0,
                    help="fraction of cross pairs an attacker keeps dropping after the lift")
    sp.set_defaults(func=_cmd_heal)

    sp = sub.add_parser("delay-node", help="sweep interception fractions against one victim")
    common(sp)
    sp.add_argument("--interception", default="0,0.5,0.8,1.0",
                    help="comma-separated interception fractions")
    sp.set_defaults(func=_cmd_delay_node)

    sp = sub.add_parser("multihoming-sweep", help="orphan rate vs pool hosting degree under a coalition attack")
    common(sp, scenario_required=False)
    sp.add_argument("--degrees", default="1,3,5,7", help="comma-separated hosting degrees")
    sp.add_argument("--coalition", required=True, help="country code whose ASes attack")
    sp.set_defaults(func=_cmd_multihoming_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (tp.ScenarioError, planner.PlanningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SCENARIO_ERR
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERR


def entry() -> None:
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
