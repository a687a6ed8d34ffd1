"""Command-line entrypoint: ``lpvbench synth|analyze|simulate|repro``."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, Optional

from incremental_lpv.errors import InfeasibleError, LpvError, NumericalFailureError
from lpv_utils import setup_logging

from .experiment import DEFAULT_EXPERIMENT_NAME, ExperimentConfig, load_experiment
from .pipeline import run_analyze, run_repro, run_simulate, run_synth

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser for the CLI entrypoint."""

    parser = argparse.ArgumentParser(
        prog="lpvbench",
        description="Incremental LPV controller synthesis, analysis and simulation.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=None,
        help=f"Path to the experiment file (default: {DEFAULT_EXPERIMENT_NAME}; repro falls back to built-in defaults).",
    )
    common.add_argument("--out", default=None, help="Output directory; overrides the config's output_dir.")
    common.add_argument("--seed", type=int, default=None, help="Random seed for probes and sampled checks.")
    common.add_argument(
        "--quadrature-order",
        type=int,
        default=None,
        help="Gauss-Legendre order of the controller path integrals.",
    )
    common.add_argument(
        "--eps-pole",
        type=float,
        default=None,
        help="Radial move applied to unit-circle weight poles.",
    )
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[common], help="Synthesize controllers and write certificates.")
    commands.add_parser("analyze", parents=[common], help="Gain analysis and divergence probe.")
    commands.add_parser("simulate", parents=[common], help="Run the configured scenarios.")
    commands.add_parser("repro", parents=[common], help="Full pipeline plus the acceptance checks.")
    return parser


def _resolve_config(args: argparse.Namespace) -> tuple[ExperimentConfig, Path]:
    """Load the experiment and apply command-line overrides; returns it with its base directory."""
    if args.config is None and args.command == "repro":
        cfg, base = ExperimentConfig(), Path.cwd()
    else:
        path = Path(args.config or DEFAULT_EXPERIMENT_NAME).expanduser().resolve()
        cfg, base = load_experiment(path), path.parent
    updates: Dict[str, object] = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.quadrature_order is not None:
        if args.quadrature_order < 1:
            raise SystemExit("--quadrature-order must be positive")
        updates["quadrature_order"] = args.quadrature_order
    if args.eps_pole is not None:
        if not 0 <= args.eps_pole < 1:
            raise SystemExit("--eps-pole must lie in [0, 1)")
        updates["weights"] = cfg.weights.model_copy(update={"epsilon": args.eps_pole})
    if args.out is not None:
        updates["output_dir"] = args.out
    return cfg.model_copy(update=updates), base


def _directory(base: Path, value: str) -> Path:
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


COMMANDS: Dict[str, Callable[[ExperimentConfig, Path], dict]] = {
    "synth": run_synth,
    "analyze": run_analyze,
    "simulate": run_simulate,
    "repro": run_repro,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code.

    Configuration problems and missing inputs raise :class:`SystemExit` with a
    message (exit code 1). Infeasible or numerically failed syntheses return 2.
    """

    args = build_parser().parse_args(argv)
    cfg, base = _resolve_config(args)
    out_dir = _directory(base, cfg.output_dir)
    log_file = setup_logging(
        _directory(base, cfg.log_dir), logging.DEBUG if args.verbose else logging.INFO
    )
    LOGGER.info("lpvbench %s: experiment %s, output %s, log %s", args.command, cfg.name, out_dir, log_file)

    try:
        result = COMMANDS[args.command](cfg, out_dir)
    except (InfeasibleError, NumericalFailureError) as exc:
        LOGGER.error("Synthesis failed: %s (%s)", exc, getattr(exc, "diagnostics", {}))
        print(f"{args.command}: {exc}")
        return EXIT_INFEASIBLE
    except LpvError as exc:
        LOGGER.exception("Command %s failed", args.command)
        raise SystemExit(f"{args.command}: {exc}") from exc

    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
