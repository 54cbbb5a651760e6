"""Command-line entry point: ``ergodic-hjb <subcommand> --config run.json``.

Exit status: 0 when every requested check passes, 1 when a check fails,
2 for configuration or stage errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import STAGES, load_config
from .errors import ConfigError, StageError
from .pipeline import read_results, run_stages
from .plotting import render_report

THREADS_ENV = "ERGODIC_HJB_THREADS"


def _threads(value) -> int:
    raw = value if value is not None else os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except (TypeError, ValueError):
        raise ConfigError("threads", f"must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("threads", f"must be a positive integer, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergodic-hjb",
                                     description="Solve and verify degenerate ergodic HJB problems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        p = sub.add_parser(name, help="run every configured stage" if name == "run"
                           else f"run the {name} stage")
        p.add_argument("--config", required=name != "report", help="JSON experiment config")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        p.add_argument("--threads", type=int, help=f"worker cap (fallback: ${THREADS_ENV})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        if args.command == "report" and not args.config:
            if not args.output:
                raise ConfigError("output", "report without --config needs --output")
            results = read_results(args.output)
            files = render_report(results, args.output)
            print("\n".join(files))
            return 0 if results.get("all_passed", True) else 1
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed", "must lie in [0, 2^64)")
            cfg.simulation = {**cfg.simulation, "seed": args.seed} if cfg.simulation else {
                "seed": args.seed}
        stages = cfg.stages if args.command == "run" else [args.command]
        results, passed = run_stages(cfg, stages, output=args.output, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.output or cfg.output)
    for check in results["checks"]:
        print(f"{'PASS' if check['passed'] else 'FAIL'}\t{check['name']}")
    print(f"results: {out / 'results.json'}")
    return 0 if passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
