"""Command line entry point.

Every subcommand except ``report`` runs the matching pipeline stage from
the config file; ``run`` runs all configured stages (or ``--stages``).

Exit codes: 0 success, 1 config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import STAGES, validate_config
from .errors import ConfigInvalid, DataError, StageError
from .pipeline import RUN_RECORD, report, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

SUBCOMMANDS = {
    "ingest": "ingest",
    "acquire": "acquire",
    "consensus": "consensus",
    "select": "select",
    "align": "align",
    "merge": "merge",
    "split": "split",
    "eval": "eval",
    "pick-weights": "pick-weights",
    "simulate": "simulate",
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", "-c", default=default, help="pipeline config file (YAML or JSON)")
    parser.add_argument("--workers", "-w", type=int, default=default, help="worker processes for per-frame work")
    parser.add_argument("--out", "-o", default=default, help="output directory (overrides config)")
    parser.add_argument("--stages", default=default, help="comma-separated stage list for 'run'")
    parser.add_argument("--seed-override", type=int, default=default, help="replace simulation and split seeds")
    if not suppress:
        parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dataengine", description=__doc__.split("\n\n")[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _global_flags(sub.add_parser(name, help=f"run the {name} stage"), suppress=True)
    _global_flags(sub.add_parser("run", help="run the full pipeline"), suppress=True)
    p = sub.add_parser("report", help="print the summary of a finished run")
    _global_flags(p, suppress=True)
    return parser


def _out_dir_for_report(args) -> Path:
    if args.out:
        return Path(args.out)
    if args.config:
        return validate_config(args.config).output_dir
    return Path("out")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "report":
            out = _out_dir_for_report(args)
            if not (out / RUN_RECORD).exists():
                print(f"no run record in {out}", file=sys.stderr)
                return EXIT_DATA
            print(report(out))
            return EXIT_OK
        if not args.config:
            print("--config is required", file=sys.stderr)
            return EXIT_CONFIG
        overrides = {"workers": args.workers, "output_dir": args.out, "seed": args.seed_override}
        if args.command == "run":
            overrides["stages"] = args.stages
        else:
            overrides["stages"] = SUBCOMMANDS[args.command]
        cfg = validate_config(args.config, {k: v for k, v in overrides.items() if v is not None})
        if args.command == "run" and not cfg.stages:
            print("no stages configured; set 'stages' in the config or pass --stages", file=sys.stderr)
            return EXIT_CONFIG
        run_pipeline(cfg)
        print(report(cfg.output_dir))
        return EXIT_OK
    except ConfigInvalid as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConfigInvalid):
            return EXIT_CONFIG
        if isinstance(exc.cause, (DataError, OSError, ValueError)):
            return EXIT_DATA
        return EXIT_INTERNAL
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
