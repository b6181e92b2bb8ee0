"""Command surface: ``run <config>`` and ``presets``."""

import argparse
import asyncio
import sys

from app.core.logging import logger
from app.models.exceptions import ConfigError, LabError
from app.schemas.experiments import load_config
from app.services.runner import run_experiments
from app.utils.presets import get_preset_manager


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="partialbounds",
        description="Numerical checks of partial Gaussian bounds for degenerate elliptic operators",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiments of a JSON config")
    run.add_argument("config", help="Path to the experiment config (JSON)")
    run.add_argument(
        "--output-dir",
        default=None,
        help="Directory for report.json, tables/ and plots/ (overrides the config)",
    )
    run.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Number of experiments run at the same time (default: WORKERS setting)",
    )
    run.add_argument(
        "--override-validity",
        action="store_true",
        help="Accept t grids outside the validity window; such points are flagged",
    )

    commands.add_parser("presets", help="List field, cutoff and multiplier presets")
    return parser.parse_args(argv)


def list_presets() -> str:
    return get_preset_manager().render()


def _run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, override_validity=args.override_validity)
        report = asyncio.run(
            run_experiments(config, output_dir=args.output_dir, workers=args.workers)
        )
    except ConfigError as err:
        print(f"[error] {err.reason}")
        return err.status
    except LabError as err:
        logger.error(f"Run aborted: {err.reason}")
        print(f"[error] {err.reason}")
        return err.status

    for summary in report.experiments:
        line = f"[{summary.status.value}] {summary.index:02d} {summary.kind}"
        if summary.error:
            line += f": {summary.error}"
        print(line)
    print(f"[{report.status.value}] run {report.run_id} exit status {report.exit_status}")
    return report.exit_status


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    if args.command == "presets":
        sys.stdout.write(list_presets())
        return 0
    return _run(args)
