"""Command line entry point: ``dectdc {gen,run,sweep,verify,plotdata}``.

Exit codes: 0 on success, 1 when a run or input fails, 2 when the
verification suite reports a failing check.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import yaml

from .decentral import RunConfig
from .env import make_env, save_bundle
from .errors import DecTdcError
from .harness import (WORKERS_ENV, ExperimentSpec, dump_spec, emit_plotdata, expand_sweep,
                      load_spec, run_experiment, spec_from_dict, _run_to_dict)
from .network import load_topology
from .tdc import fixed_point_for, save_fixed_point

EXIT_OK, EXIT_RUN, EXIT_VERIFY = 0, 1, 2

_RUN_FLAGS = {f.name: f for f in fields(RunConfig) if f.name != "seed"}


def _add_env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-states", type=int, default=10)
    p.add_argument("--n-agents", type=int, default=10)
    p.add_argument("--actions-per-agent", type=int, default=2)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--floor-prob", type=float, default=1e-2)


def _env_kwargs(args) -> dict:
    return dict(n_states=args.n_states, n_agents=args.n_agents,
                actions_per_agent=args.actions_per_agent, dim=args.dim, gamma=args.gamma,
                r_max=args.r_max, noise_std=args.noise_std, floor_prob=args.floor_prob)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    for name, f in _RUN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        typ = type(f.default)
        p.add_argument(flag, type=typ, default=None, help=f"RunConfig.{name} (default {f.default!r})")


def _topology_dict(arg: str | None) -> dict:
    if arg is None or arg == "fully_connected":
        return {"kind": "fully_connected", "diag": 0.8}
    if arg == "ring":
        return {"kind": "ring", "diag": 0.8, "neighbor": 0.1}
    return {"kind": "file", "path": str(Path(arg).resolve())}


# --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    env = make_env(args.seed, **_env_kwargs(args))
    save_bundle(env, args.output)
    print(f"wrote environment bundle {args.output}")
    if args.fixed_point:
        save_fixed_point(fixed_point_for(env), args.fixed_point)
        print(f"wrote fixed point {args.fixed_point}")
    return EXIT_OK


def _spec_from_flags(args) -> ExperimentSpec:
    run = {k: getattr(args, k) for k in _RUN_FLAGS if getattr(args, k) is not None}
    run.setdefault("label", run.get("algorithm", "alg1"))
    doc = {"name": "cli", "seed": args.seed, "topology": _topology_dict(args.topology),
           "repetitions": args.repetitions, "runs": [run]}
    if args.env:
        doc["env_path"] = str(Path(args.env).resolve())
    else:
        doc["env"] = _env_kwargs(args)
    return spec_from_dict(doc, Path.cwd(), "<command line>")


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    over = {k: getattr(args, k) for k in _RUN_FLAGS
            if k != "label" and getattr(args, k, None) is not None}
    if not over:
        return spec
    return replace(spec, runs=[replace(r, **over) for r in spec.runs])


def _report_run(result, out) -> None:
    for label, s in result.summary().items():
        last = s["median"][-1] if s["median"] else float("nan")
        flags = f" [{'; '.join(s['flags'])}]" if s["flags"] else ""
        print(f"{label}: {s['repetitions']} reps, final median convErr {last:.4g}{flags}")
    if out:
        print(f"wrote {out}")


def cmd_run(args) -> int:
    if args.spec:
        spec = _apply_overrides(load_spec(args.spec), args)
        if args.repetitions_override is not None:
            spec = replace(spec, repetitions=args.repetitions_override)
    else:
        spec = _spec_from_flags(args)
    out = args.output or (spec._resolve(spec.output) if spec.output else None)
    result = run_experiment(spec, out)
    if out is None:
        sys.stdout.write(result.csv_text())
    else:
        _report_run(result, out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = load_spec(args.spec)
    grid = {}
    if args.batch_size:
        grid["batch_size"] = args.batch_size
    if args.gossip_rounds:
        grid["gossip_rounds"] = args.gossip_rounds
    runs = []
    for cfg in base.runs:
        entry = _run_to_dict(cfg)
        if "batch_size" in grid:
            entry.pop("iterations", None)
            if args.alpha_per_sample is not None:
                entry.pop("alpha", None)
                entry["alpha_per_sample"] = args.alpha_per_sample
            if args.beta_per_sample is not None:
                entry.pop("beta", None)
                entry["beta_per_sample"] = args.beta_per_sample
        entry.update(grid)
        suffix = "".join(f"_{k[0]}{{{k}}}" for k in sorted(grid))
        entry["label"] = cfg.label.replace("{", "{{").replace("}", "}}") + suffix
        runs.extend(expand_sweep(entry))
    doc = base.to_dict()
    doc["runs"] = runs
    if base.samples is None and "batch_size" in grid:
        doc["samples"] = max(r.samples_needed for r in base.runs)
    spec = spec_from_dict(doc, base.base_dir, str(args.spec))
    if args.dry_run:
        sys.stdout.write(dump_spec(spec))
        return EXIT_OK
    out = args.output or (spec._resolve(spec.output) if spec.output else None)
    result = run_experiment(spec, out)
    if out is None:
        sys.stdout.write(result.csv_text())
    else:
        _report_run(result, out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import verify_suite

    tops = [load_topology(p, check=False) for p in args.topology] if args.topology else None
    report = verify_suite(args.seed, topologies=tops)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1))
    else:
        print(report.text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_plotdata(args) -> int:
    paths = emit_plotdata(args.csv, args.group_by, args.output)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dectdc", description="Decentralized multi-agent TDC simulator.",
        epilog=f"Set {WORKERS_ENV}=<n> to run repetitions on n worker processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an environment bundle")
    p.add_argument("--seed", type=int, default=0)
    _add_env_flags(p)
    p.add_argument("-o", "--output", required=True, help="bundle path (JSON)")
    p.add_argument("--fixed-point", help="also write the fixed point to this path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run a spec file, or a single run described by flags")
    p.add_argument("spec", nargs="?", help="experiment spec (YAML)")
    p.add_argument("-o", "--output", help="CSV path (default: spec output, else stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env", help="environment bundle to use instead of generating one")
    p.add_argument("--topology", help="fully_connected, ring, or a topology file")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--override-repetitions", dest="repetitions_override", type=int,
                   help="replace the spec's repetition count")
    _add_env_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="expand a spec over batch-size and gossip-round grids")
    p.add_argument("spec")
    p.add_argument("--batch-size", type=int, nargs="+")
    p.add_argument("--gossip-rounds", type=int, nargs="+")
    p.add_argument("--alpha-per-sample", type=float)
    p.add_argument("--beta-per-sample", type=float)
    p.add_argument("-o", "--output")
    p.add_argument("--dry-run", action="store_true", help="print the expanded spec and exit")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", action="append", help="topology file to check (repeatable)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="export median and 5/95 percentile series")
    p.add_argument("csv")
    p.add_argument("--group-by", default="samples", help="samples, paramComm, ratioComm or iter")
    p.add_argument("-o", "--output", help="output directory")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DecTdcError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
