"""Main entry point for running the shape repair pipeline.

Usage::

    python -m src.run_pipeline fracture --config configs/desk.toml --out runs/desk
    python -m src.run_pipeline run --config configs/desk.toml --threads 1
    python -m src.run_pipeline export input.obj output.ply
    python -m src.run_pipeline report --out runs/desk
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, List, Optional, TextIO

from .config import load_config, runtime
from .errors import ConfigError, ShapeRepairError

logger = logging.getLogger(__name__)

COMMANDS = ("fracture", "sample", "train", "infer", "eval", "ablate", "run")
LOG_FORMAT = "%(label)s: %(message)s"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="shape-repair", description="Fractured shape repair pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="TOML pipeline config (defaults when omitted)")
        cmd.add_argument("--out", default=runtime.out_dir, help="artifact directory")
        cmd.add_argument("--seed", type=int, help="offset added to every section seed")
        cmd.add_argument("--threads", type=int, default=runtime.threads,
                         help="worker threads; 1 is bit-reproducible")
        cmd.add_argument("--resolution", type=int, help="marching-cubes resolution override")
        if name == "ablate":
            cmd.add_argument("--configs", nargs="+", help="subset of head configurations")
    export = sub.add_parser("export")
    export.add_argument("source")
    export.add_argument("destination")
    export.add_argument("--format", dest="fmt", choices=["obj", "ply"])
    export.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    report = sub.add_parser("report")
    report.add_argument("--out", default=runtime.out_dir, help="artifact directory holding eval/")
    return parser


class StderrFormatter(logging.Formatter):
    """Formats records as ``Warning: message``."""

    def format(self, record: logging.LogRecord) -> str:
        record.label = record.levelname.capitalize()
        return super().format(record)


def configure_logging(level: str = runtime.log_level, stream: Optional[TextIO] = None) -> None:
    """Send package log records to stderr (or ``stream``) at ``level``."""
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(StderrFormatter(LOG_FORMAT))
    package = logging.getLogger(__package__ or "src")
    package.handlers = [handler]
    package.setLevel(getattr(logging, level, logging.INFO))


def pin_threads(threads: int) -> None:
    """Set BLAS thread counts, overriding inherited values; must run before numpy is imported."""
    for var in THREAD_VARS:
        os.environ[var] = str(max(1, threads))


def dispatch(args: argparse.Namespace) -> Any:
    from . import pipeline

    if args.command == "export":
        return pipeline.cmd_export(args.source, args.destination, args.fmt, binary=not args.ascii)
    if args.command == "report":
        return pipeline.cmd_report(args.out)
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    if args.resolution is not None and args.resolution < 2:
        raise ConfigError(f"--resolution must be >= 2, got {args.resolution}")
    config = load_config(args.config).with_seed(args.seed)
    if args.command == "fracture":
        return pipeline.cmd_fracture(config, args.out, args.threads, args.resolution)
    if args.command == "sample":
        return pipeline.cmd_sample(config, args.out, args.threads)
    if args.command == "train":
        return pipeline.cmd_train(config, args.out)
    if args.command == "infer":
        return pipeline.cmd_infer(config, args.out, args.threads, args.resolution)
    if args.command == "eval":
        return pipeline.cmd_eval(config, args.out, args.threads)
    if args.command == "ablate":
        return pipeline.cmd_ablate(config, args.out, args.threads, args.resolution, args.configs)
    return pipeline.run_full_pipeline(config, args.out, args.threads, args.resolution)


def print_result(command: str, result: Any) -> None:
    print(f"=== {command} ===")
    if hasattr(result, "to_string"):
        print(result.to_string(index=False))
    elif isinstance(result, dict):
        shown = {k: v for k, v in result.items() if k not in ("manifest", "records", "shapes")}
        print(json.dumps(shown, indent=2, sort_keys=True, default=str))
    else:
        print(result)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging()
    if args.command in COMMANDS:
        pin_threads(args.threads)
    try:
        result = dispatch(args)
    except ShapeRepairError as e:
        logger.error("%s", e)
        return e.exit_code
    except Exception as e:
        logger.exception("Error running pipeline: %s", e)
        return 1
    print_result(args.command, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
