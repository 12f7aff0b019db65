"""Command line interface: run, report, selftest."""

from __future__ import annotations

import argparse
import os
import sys
from ermu import __version__
from ermu.errors import ConfigError, ErmuError


def _threads_from(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ERMU_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            print(f"warning: ignoring non-integer ERMU_THREADS={env!r}", file=sys.stderr)
    return 0  # fall back to the config value


def cmd_run(args) -> int:
    from dataclasses import replace

    from ermu.campaign import run_campaign
    from ermu.config import load_config

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        config = replace(config, master_seed=args.seed_override)
    out_dir = args.out or config.output_dir
    if out_dir is None:
        print("error: no output directory (use --out or config output_dir)", file=sys.stderr)
        return 2
    try:
        summary = run_campaign(config, out_dir, threads=_threads_from(args))
    except ErmuError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {summary.n_rows} trial rows to {summary.out_dir} "
        f"({summary.quarantined} quarantined) in {summary.wall_time_s:.1f} s"
    )
    return 0


def cmd_report(args) -> int:
    from ermu.report import write_report

    try:
        path = write_report(args.results, out_dir=args.out)
    except ErmuError as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    from ermu.selftest import run_selftest

    ok = run_selftest(threads=_threads_from(args) or 1)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ermu",
        description="Monte Carlo testbench comparing feature-model ERM with its Gaussian twin",
    )
    parser.add_argument("--version", action="version", version=f"ermu {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a campaign from a config file")
    p_run.add_argument("--config", required=True, help="path to the JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--threads", type=int, default=None, help="worker processes")
    p_run.add_argument("--seed-override", type=int, default=None, help="replace the master seed")
    p_run.set_defaults(fn=cmd_run)

    p_rep = sub.add_parser("report", help="summarize a results directory")
    p_rep.add_argument("--results", required=True, help="directory holding trials.csv")
    p_rep.add_argument("--out", default=None, help="where to write report artifacts")
    p_rep.set_defaults(fn=cmd_report)

    p_self = sub.add_parser("selftest", help="run the fast property suite")
    p_self.add_argument("--threads", type=int, default=None)
    p_self.set_defaults(fn=cmd_selftest)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
