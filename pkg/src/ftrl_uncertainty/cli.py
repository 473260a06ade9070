"""Command-line entry point: ``run``, ``list``, ``describe`` and ``verify``."""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericalFailure
from .experiments import describe, list_experiments, parse_config, run_experiment, run_verify


def _out_default():
    return os.environ.get("OUTPUT_DIR")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftrl-uncertainty",
                                description="Covariance and entropy experiments for FTRL in zero-sum games.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config ('-' reads stdin)")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--seed", type=int, default=None)
    sub.add_parser("list", help="list registered experiments")
    d = sub.add_parser("describe", help="show a registered experiment")
    d.add_argument("name")
    v = sub.add_parser("verify", help="run every registered experiment and write a manifest")
    v.add_argument("--out", default=None)
    v.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            for name, desc in list_experiments():
                print(f"{name}\t{desc}")
            return 0
        if args.command == "describe":
            print(describe(args.name))
            return 0
        if args.command == "run":
            source = sys.stdin if args.config == "-" else args.config
            if source is not sys.stdin and not os.path.isfile(source):
                raise ConfigError(f"config file not found: {source}", "")
            cfg = parse_config(source, seed=args.seed, output_dir=args.out or _out_default())
            report = run_experiment(cfg)
            for ch in report.checks:
                tag = "PASS" if ch.passed else "FAIL"
                print(f"{tag}{'' if ch.asserted else ' (report only)'} {ch.name}: {ch.detail}")
            print(f"wrote {len(report.manifest['files'])} files to {cfg.output_dir}")
            return report.exit_status
        out = args.out or _out_default() or "out/verify"
        ok, _, lines = run_verify(out, args.seed)
        print("\n".join(lines))
        print(f"manifest: {os.path.join(out, 'manifest.json')}")
        return 0 if ok else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
