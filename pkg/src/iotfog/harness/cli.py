"""``iotfog`` command line: run scenarios and check stored reports."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence

from iotfog import __version__
from iotfog.harness.config import ConfigError, ScenarioConfig, load_config
from iotfog.harness.report import check_shape, emit_report, load_report
from iotfog.harness.scenario import ScenarioError, run_scenario

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

log = logging.getLogger("iotfog")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iotfog", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the ON/OFF scenario and write the report")
    run.add_argument("--config", help="key=value scenario file (defaults when omitted)")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--out", default="report", help="output directory (default: %(default)s)")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--parallel", action="store_true", help="run sizes in worker processes")

    check = sub.add_parser("check", help="run the shape check on a stored report")
    check.add_argument("--report", required=True, help="report.json, a size_<n>.csv, or a directory of them")
    return parser


def _run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()
    report = run_scenario(cfg, parallel=args.parallel)
    for path in emit_report(report, args.out, args.format):
        print(path)
    for size in report.sizes:
        print(
            f"n={size.size}: {size.blocks_committed} blocks, {size.transactions_committed} txs, "
            f"commit {size.commit_latency_s:.3f} s, sent {size.sent}, dropped {size.dropped}, "
            f"chains {'consistent' if size.chains_consistent else 'DIVERGED'}"
        )
    return _report_violations(check_shape(report))


def _check(args: argparse.Namespace) -> int:
    try:
        report = load_report(args.report)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load report {args.report}: {exc}") from exc
    return _report_violations(check_shape(report))


def _report_violations(violations: list) -> int:
    for v in violations:
        print(f"violation {v}")
    print("shape: pass" if not violations else f"shape: {len(violations)} violation(s)")
    return EXIT_VIOLATIONS if violations else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _run(args) if args.command == "run" else _check(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - exit code 3 covers any simulator fault
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
