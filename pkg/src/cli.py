"""
Command-line entry point: one subcommand per experiment kind, plus ``validate``.

    python src/cli.py decision_map --config configs/reference_decision_map.yaml --out results/maps

Exit codes: 0 success, 2 config error, 3 internal invariant violation.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from config import KINDS, Settings, canonical_form, load_config
from errors import (
    ConfigError,
    InferenceUnavailableError,
    InvariantViolation,
    OffloadError,
    PolicyContractError,
    Violation,
)
from runner import ExperimentRunner

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%H:%M:%S"

_INTERNAL_ERRORS = (InvariantViolation, PolicyContractError, InferenceUnavailableError)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )


def error_record(exc: BaseException, exit_code: int) -> dict:
    """Machine-readable description of a failed run."""
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code}
    if isinstance(exc, ConfigError):
        record["violations"] = [v.to_dict() for v in exc.violations]
    return record


def _report(exc: BaseException, exit_code: int) -> int:
    print(json.dumps(error_record(exc, exit_code), sort_keys=True), file=sys.stderr)
    return exit_code


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, _INTERNAL_ERRORS):
        return EXIT_INTERNAL
    if isinstance(exc, (OffloadError, ValueError)):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def run_experiment(
    config,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> int:
    """
    Run a validated experiment and map failures to exit codes.

    Args:
        config: Validated experiment model
        out_dir: Output directory override
        seed: Base seed override
        threads: Thread count override (0 = auto)

    Returns:
        Process exit status
    """
    try:
        ExperimentRunner(config, out_dir=out_dir, seed=seed, threads=threads).run()
    except Exception as exc:  # partial outputs are already removed by the runner
        code = exit_code_for(exc)
        if code == EXIT_INTERNAL:
            logger.exception("experiment failed")
        return _report(exc, code)
    return EXIT_OK


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {value}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offload-dp",
        description="Finite-horizon task offloading: exact DP, structure checks and simulation.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in KINDS + ("validate",):
        help_text = (
            "validate a config and print its canonical form"
            if command == "validate"
            else f"run a {command} experiment"
        )
        sub = subparsers.add_parser(command, help=help_text)
        sub.add_argument("--config", required=True, help="path to the YAML experiment config")
        sub.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
        if command == "validate":
            continue
        sub.add_argument("--out", default=None, help="output directory")
        sub.add_argument("--seed", type=_u64, default=None, help="base seed (overrides config)")
        sub.add_argument(
            "--threads", type=_non_negative, default=None, help="worker threads, 0 = auto"
        )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings.from_env()
    configure_logging(args.log_level or settings.log_level)

    try:
        config = load_config(args.config)
        if args.command != "validate" and config.kind != args.command:
            raise ConfigError(
                [Violation("kind", f"config is a {config.kind} experiment, not {args.command}")]
            )
    except ConfigError as exc:
        return _report(exc, EXIT_CONFIG)

    if args.command == "validate":
        print(canonical_form(config), end="")
        return EXIT_OK
    return run_experiment(config, out_dir=args.out, seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
