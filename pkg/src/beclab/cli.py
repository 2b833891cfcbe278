"""bec-lab command line: run, report and validate experiment configs."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _config_errors(exc: harness.ConfigError) -> int:
    for p in exc.problems:
        print(p, file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        outcome, root = harness.run(args.config, args.output)
    except harness.ConfigError as exc:
        return _config_errors(exc)
    for line in outcome.lines:
        print(line)
    print(f"results: {root}")
    if not outcome.ok:
        print("one or more scenario checks failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        table, summary = harness.report(args.dir)
    except harness.IncompleteSweepError as exc:
        print(f"incomplete sweep: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (FileNotFoundError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAILED
    print("N  d  e_N  e_H  e_nls  gap  condensate_fraction")
    for r in table:
        print(f"{r['N']} {r['d']} {r['e_N']:.10f} {r['e_H']:.10f} {r['e_nls']:.10f} {r['gap']:.3e} "
              f"{r['condensate_fraction']:.6f}")
    print(f"slope of log|gap| vs log N: {summary['log_gap_slope']:.4f}")
    print(f"C_fit = {summary['C_fit']:.6f}, min e_N = {summary['min_e_N']:.6f}")
    return EXIT_OK if summary["variational_ok"] else EXIT_FAILED


def cmd_validate(args) -> int:
    try:
        cfg = harness.load_config(args.config)
    except harness.ConfigError as exc:
        return _config_errors(exc)
    print(f"{args.config}: ok ({cfg.scenario})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bec-lab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the scenario described by a TOML config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="results directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="build convergence.csv from a many-body sweep directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
