"""Command-line entry point: ``tabrl <kind> --config c.yaml --out dir`` and ``tabrl verify``."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness.config import KINDS, build_config, load_config
from .harness.runner import run_experiment


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc


def _ids(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"criteria must be comma-separated integers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabrl", description="Seeded tabular RL experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="YAML config with dotted keys (defaults if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds, overriding the config")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--out", default="verify-out", help="directory for verify.csv")
    v.add_argument("--only", type=_ids, help="comma-separated criterion numbers")
    return parser


def _verify(args) -> int:
    from .acceptance import CRITERIA, run_criterion, write_report

    ids = args.only or sorted(CRITERIA)
    unknown = [i for i in ids if i not in CRITERIA]
    if unknown:
        print(f"unknown criteria: {unknown}", file=sys.stderr)
        return 2
    outcomes = []
    for ident in ids:
        outcome = run_criterion(ident)
        print(outcome.line(), flush=True)
        outcomes.append(outcome)
    write_report(outcomes, args.out)
    ok = all(o.ok for o in outcomes)
    print(f"{sum(o.ok for o in outcomes)}/{len(outcomes)} criteria passed")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return _verify(args)
    try:
        if args.config:
            cfg = load_config(args.config, kind=args.command, seeds=args.seeds)
        else:
            cfg = build_config({"kind": args.command}, seeds=args.seeds)
        records = run_experiment(cfg, args.out, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"{len(records)} runs written to {args.out} (config {cfg.hash()})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
