"""Command-line entry point: ``cskuramoto <subcommand> [options]``.

Exit status is 0 when every verdict passes, 1 when any fails and 2 for usage
or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..ensemble import load_measure
from ..metrics import aw2, w2, w2_fibered
from . import presets, scenarios
from .config import ConfigError, load_config

RUNNERS = {
    "simulate": ("simulate", scenarios.scenario_simulate),
    "equivalence": ("equivalence", scenarios.scenario_equivalence),
    "dissipation": ("dissipation", scenarios.scenario_dissipation),
    "rate": ("convergence_rate", scenarios.scenario_convergence_rate),
    "stability": ("stability", scenarios.scenario_stability),
    "meanfield": ("mean_field", scenarios.scenario_mean_field),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (defaults to the built-in preset)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory for report.json and CSV artifacts")
    p.add_argument("--deterministic", action="store_true",
                   help="sequential reductions and a single worker; reports are byte-reproducible")
    p.add_argument("--plot-data", action="store_true", help="also write ready-to-plot CSV files")
    p.add_argument("--jobs", type=int, help="worker processes for grid cells (ignored with --deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cskuramoto", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        _common(p)
        if name == "simulate":
            p.add_argument("--init", help="initial measure (.csv or .jsonl); sampled from the config otherwise")
    m = sub.add_parser("metrics", help="transport distances between two stored measures")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--kind", choices=["w2", "w2x", "fibered", "adapted"], default="w2")
    m.add_argument("--method", choices=["auto", "sorted", "assignment", "simplex", "brute"], default="auto")
    m.add_argument("--out")
    m.add_argument("--deterministic", action="store_true")
    return parser


def _run_metrics(args) -> int:
    a, b = load_measure(args.a), load_measure(args.b)
    if args.kind == "w2":
        plan = w2(a, b, coords="full", method=args.method)
    elif args.kind == "w2x":
        plan = w2(a, b, coords="x", method=args.method)
    elif args.kind == "fibered":
        plan = w2_fibered(a, b, method=args.method)
    else:
        plan = aw2(a, b, method=args.method)
    report = {"scenario": "metrics", "kind": args.kind, "method": plan.method, "distance": plan.distance,
              "cost": plan.cost, "inputs": [str(args.a), str(args.b)], "passed": True}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        plan.to_csv(out / "plan.csv")
        scenarios.write_report(report, out)
    print(json.dumps(scenarios.clean({k: report[k] for k in ("kind", "method", "distance")}), sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "metrics":
            return _run_metrics(args)
        scenario, runner = RUNNERS[args.command]
        cfg = load_config(args.config) if args.config else presets.preset(scenario)
        if cfg.scenario != scenario:
            raise ConfigError(f"config is for scenario {cfg.scenario!r}, not {scenario!r}")
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, jobs=args.jobs)
        if args.deterministic:
            cfg = cfg.with_overrides(jobs=1)
        out = Path(cfg.out) if cfg.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        kwargs = {}
        if args.command == "simulate" and args.init:
            kwargs["initial"] = load_measure(args.init)
        report = runner(cfg, out=out, plot_data=args.plot_data, **kwargs)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if out is not None:
        scenarios.write_report(report, out)
    print(f"{args.command}: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
