"""Command-line entry point: ``mfg-gcg run|sweep|plotdata``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import SOLVER_ERRORS, ConfigError, load_config, plot_data, run_single, run_sweep

log = logging.getLogger("mfg_gcg")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfg-gcg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log CFL restarts and progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "single GCG run"), ("sweep", "compare stepsize rules")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", required=True, help="output directory")
    p = sub.add_parser("plotdata", help="plot-ready CSV from metrics files")
    p.add_argument("metrics", nargs="+", help="metrics.csv files; the rule name is the parent directory")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)

    if args.command == "plotdata":
        try:
            plot_data(args.metrics, out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            summary = run_single(cfg, out)
            print(f"{summary['rule']} {summary['params']}: sigma={summary['final_sigma']:.3e} "
                  f"after {summary['iterations']} iterations (nt={summary['nt_used']})")
        else:
            failed = 0
            for summary in run_sweep(cfg, out):
                if "failed" in summary:
                    failed += 1
                    print(f"{summary['rule']} {summary['params']}: failed ({summary['failed']})")
                else:
                    print(f"{summary['rule']} {summary['params']}: sigma={summary['final_sigma']:.3e} "
                          f"after {summary['iterations']} iterations (nt={summary['nt_used']})")
            if failed:
                return EXIT_SOLVER
    except (*SOLVER_ERRORS, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
