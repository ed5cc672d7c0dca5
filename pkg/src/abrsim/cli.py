"""Scenario runner: single runs and parameter sweeps from the shell.

Exit codes: 0 success, 2 scenario/validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import engine, scenario as scenario_mod
from .scenario import ScenarioError


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="abrsim",
        description="Discrete-event simulator of ATM ABR traffic management "
                    "(explicit-rate feedback, GCRA policing).")
    ap.add_argument("scenario",
                    help="scenario YAML path or builtin name: "
                         + ", ".join(scenario_mod.BUILTIN_NAMES))
    ap.add_argument("--out", default=None,
                    help="report directory (default: ./abrsim-out/<name>)")
    ap.add_argument("--seed", type=int, default=None, help="override RNG seed")
    ap.add_argument("--duration", type=float, default=None,
                    help="override run duration in seconds")
    ap.add_argument("--sweep", default=None, metavar="FIELD=V1,V2,...",
                    help="run once per value of a dotted scenario field, "
                         "e.g. topology.n_sources=2,5,10")
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    return ap.parse_args(argv)


def _load_raw(path_or_name: str) -> dict:
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    elif path_or_name in scenario_mod.BUILTIN_NAMES:
        text = scenario_mod.builtin_text(path_or_name)
    else:
        raise ScenarioError(
            f"scenario not found: {path_or_name!r} is neither a file nor one of "
            f"the builtin templates {', '.join(scenario_mod.BUILTIN_NAMES)}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario {path_or_name}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario {path_or_name}: expected a mapping")
    return data


def _apply_overrides(raw: dict, args) -> None:
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.duration is not None:
        raw["duration"] = args.duration


def _run_one(raw: dict, outdir: Path, quiet: bool) -> None:
    sc = scenario_mod.from_dict(raw)
    report = engine.run(sc)
    report.write(outdir)
    if not quiet:
        cons = report.conservation
        fairness = report.steady_fairness()
        print(f"[abrsim] {sc.name}: seed={sc.seed} duration={sc.duration}s "
              f"cells created={cons['created']} delivered={cons['delivered']} "
              f"dropped={cons['dropped']}")
        if fairness is not None:
            print(f"[abrsim] steady-state fairness index: {fairness:.4f}")
        print(f"[abrsim] report written to {outdir}")


def _parse_sweep(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ScenarioError("sweep: expected FIELD=V1,V2,...")
    dotted, _, raw_values = spec.partition("=")
    dotted = dotted.strip()
    values = [yaml.safe_load(v) for v in raw_values.split(",") if v != ""]
    if not dotted or not values:
        raise ScenarioError("sweep: expected FIELD=V1,V2,...")
    return dotted, values


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    try:
        raw = _load_raw(args.scenario)
        _apply_overrides(raw, args)
        base_name = raw.get("name", Path(args.scenario).stem)
        outdir = Path(args.out) if args.out else Path("abrsim-out") / str(base_name)
        if args.sweep is None:
            _run_one(raw, outdir, args.quiet)
            return 0
        dotted, values = _parse_sweep(args.sweep)
        # Validate the field before any run starts.
        probe = json.loads(json.dumps(raw))
        scenario_mod.set_by_path(probe, dotted, values[0])
        index = []
        for value in values:
            per_run = json.loads(json.dumps(raw))
            scenario_mod.set_by_path(per_run, dotted, value)
            run_dir = outdir / f"{dotted}={value}"
            _run_one(per_run, run_dir, args.quiet)
            index.append({"field": dotted, "value": value,
                          "dir": run_dir.name})
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "sweep_index.json").write_text(
            json.dumps(index, indent=2) + "\n")
        return 0
    except ScenarioError as exc:
        print(f"abrsim: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, distinct from bad input
        print(f"abrsim: run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
