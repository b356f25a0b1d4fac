"""Command line: ``nsflab simulate|mms-verify|extension-test <config>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .harness import EXIT_CODES, OUTPUT_ENV, extension_test, mms_verify, run_simulation


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nsflab",
        description="Compressible heat-conducting flow solver with regularity diagnostics.",
        epilog=f"Exit codes: {', '.join(f'{v} {k}' for k, v in EXIT_CODES.items())}. "
               f"{OUTPUT_ENV} overrides output.dir.",
    )
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="monitored run; writes diagnostics.csv and summary.json")
    p.add_argument("config")
    p = sub.add_parser("mms-verify", help="refinement study on the config's manufactured solution")
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3, help="number of grids, each twice as fine (default 3)")
    p = sub.add_parser("extension-test", help="solve the boundary liftings and compare with oracles")
    p.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return run_simulation(cfg)
        if args.command == "mms-verify":
            return mms_verify(cfg, args.levels)
        return extension_test(cfg)
    except ConfigError as e:
        print(f"nsflab: {e}", file=sys.stderr)
        return EXIT_CODES["config-error"]
    except OSError as e:
        print(f"nsflab: {e}", file=sys.stderr)
        return EXIT_CODES["config-error"]


if __name__ == "__main__":
    sys.exit(main())
