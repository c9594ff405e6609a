"""steinlab <subcommand> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>]"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SUBCOMMANDS, default_output_dir, load_config
from .errors import ConfigError, SteinlabError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("steinlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="steinlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML config file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", help="master seed (unsigned 64-bit), overrides config and env")
        s.add_argument("--workers", type=int, help="worker threads")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .experiments import run_experiment

    try:
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        spec = load_config(args.config, args.command, seed=args.seed, workers=args.workers,
                           out=args.out)
        out_dir = default_output_dir(spec)
        log.info("running %s, output in %s", args.command, out_dir)
        result = run_experiment(spec, Path(out_dir))
    except ConfigError as exc:
        print(f"steinlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SteinlabError as exc:
        print(f"steinlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<40} {c.value:.6g} (limit {c.threshold:.6g})  {c.detail}")
    print(f"{args.command}: {'all checks passed' if result.passed else 'check failure'}"
          f" -> {out_dir}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
