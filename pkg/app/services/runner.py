"""Run an experiment config and write report.json, CSV tables and plot scripts."""

import asyncio
import platform
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import ConfigError, LabError, ResourceBoundError
from app.schemas.experiments import ExperimentConfig, ExperimentPlan
from app.schemas.report import EnvironmentStamp, ExperimentSummary, RunReport, Status
from app.services.experiments import RunContext, run_experiment
from app.utils.cuid import generate_run_id
from app.utils.results_log import ResultLogger
from app.utils.worker import get_worker_count

STAMPED_PACKAGES = ("numpy", "scipy", "pydantic", "cuid2", "python-dotenv")

PLOT_TEMPLATE = '''"""Plot {table} (generated; reads only the CSV table)."""

import csv
import json
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
TABLE = HERE.parent / "{table}"


def main():
    series = {{}}
    with open(TABLE, newline="") as f:
        for row in csv.DictReader(f):
            if not row["value"]:
                continue
            params = json.loads(row["param_json"])
            axis = next((v for v in params.values() if isinstance(v, (int, float))), None)
            if axis is None:
                continue
            series.setdefault(row["value_name"], []).append((axis, float(row["value"])))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, points in sorted(series.items()):
        points.sort()
        ax.plot([p[0] for p in points], [abs(p[1]) for p in points], "o-", ms=3, label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_title("{title}")
    ax.grid(True, which="both", alpha=0.3)
    if series:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(HERE / "{stem}.png", dpi=150)


if __name__ == "__main__":
    main()
'''


@dataclass
class ExperimentOutcome:
    plan: ExperimentPlan
    log: ResultLogger
    wall_time: float
    error: LabError | None = None


def environment_stamp(workers: int) -> EnvironmentStamp:
    packages = {}
    for name in STAMPED_PACKAGES:
        try:
            packages[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            packages[name] = "missing"
    return EnvironmentStamp(
        python=sys.version.split()[0],
        platform=platform.platform(),
        packages=packages,
        workers=workers,
        max_nodes=settings.MAX_NODES,
    )


def _table_stem(plan: ExperimentPlan) -> str:
    return f"{plan.index:02d}_{plan.kind.value}"


def _execute(ctx: RunContext, plan: ExperimentPlan) -> ExperimentOutcome:
    log = ResultLogger(experiment=_table_stem(plan))
    start = time.perf_counter()
    error = None
    try:
        run_experiment(ctx, plan.kind, plan.params, log)
    except LabError as e:
        logger.error(f"Experiment {log.experiment} failed: {e.reason}")
        error = e
    return ExperimentOutcome(plan, log, time.perf_counter() - start, error)


async def _gather(ctx: RunContext, plans: list[ExperimentPlan], workers: int):
    semaphore = asyncio.Semaphore(workers)

    async def bounded(plan: ExperimentPlan) -> ExperimentOutcome:
        async with semaphore:
            return await asyncio.to_thread(_execute, ctx, plan)

    # gather keeps index order regardless of completion order
    return await asyncio.gather(*(bounded(plan) for plan in plans))


def _summary(outcome: ExperimentOutcome, table: str) -> ExperimentSummary:
    status = Status.FAIL if outcome.error is not None else outcome.log.status
    return ExperimentSummary(
        index=outcome.plan.index,
        kind=outcome.plan.kind.value,
        status=status,
        params=outcome.plan.params.model_dump(mode="json"),
        constants=outcome.log.constants,
        checks=outcome.log.checks(),
        table=table,
        wall_time=round(outcome.wall_time, 6),
        error=outcome.error.reason if outcome.error is not None else None,
    )


def exit_status_for(outcomes: list[ExperimentOutcome]) -> int:
    """0 when nothing failed, 2 on resource or config errors, else 1."""
    errors = [o.error for o in outcomes if o.error is not None]
    if any(isinstance(e, (ResourceBoundError, ConfigError)) for e in errors):
        return 2
    if errors or any(o.log.status is Status.FAIL for o in outcomes):
        return 1
    return 0


def write_outputs(output_dir: Path, report: RunReport, outcomes: list[ExperimentOutcome]) -> None:
    tables = output_dir / "tables"
    plots = output_dir / "plots"
    tables.mkdir(parents=True, exist_ok=True)
    plots.mkdir(parents=True, exist_ok=True)

    for outcome in outcomes:
        stem = _table_stem(outcome.plan)
        table = tables / f"{stem}.csv"
        table.write_text(outcome.log.to_csv(), encoding="utf-8", newline="")
        script = PLOT_TEMPLATE.format(
            table=f"tables/{stem}.csv", title=outcome.plan.kind.value, stem=stem
        )
        (plots / f"{stem}.py").write_text(script, encoding="utf-8")

    (output_dir / "report.json").write_text(
        report.model_dump_json(indent=2), encoding="utf-8"
    )
    logger.info(f"Wrote {len(outcomes)} tables and report.json to {output_dir}")


async def run_experiments(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    workers: int | None = None,
) -> RunReport:
    """
    Run every planned experiment of a validated config.

    Experiments run concurrently in worker threads and share one
    :class:`RunContext`; outputs are written afterwards in index order, so
    tables do not depend on the worker count.

    Args:
        config: Validated configuration
        output_dir: Overrides ``config.output_dir`` and the ``OUTPUT_DIR`` setting
        workers: Overrides the ``WORKERS`` setting

    Returns:
        RunReport: The report that was written to report.json

    Raises:
        ConfigError: Invalid worker count, or the shared grid, field or
            cutoffs cannot be built.
    """
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    plans = config.plans
    workers = get_worker_count(workers, jobs=len(plans))
    target = Path(output_dir or config.output_dir or settings.OUTPUT_DIR)

    try:
        ctx = RunContext.from_config(config)
    except ConfigError:
        raise
    except LabError as e:
        raise ConfigError(f"Cannot set up the run: {e.reason}")
    logger.info(
        f"Running {len(plans)} experiment(s) on {ctx.space.n_nodes} nodes with {workers} worker(s)"
    )
    outcomes = await _gather(ctx, plans, workers)

    exit_status = exit_status_for(outcomes)
    summaries = [
        _summary(outcome, f"tables/{_table_stem(outcome.plan)}.csv") for outcome in outcomes
    ]
    if exit_status:
        status = Status.FAIL
    elif any(s.status is Status.FLAG for s in summaries):
        status = Status.FLAG
    else:
        status = Status.PASS

    report = RunReport(
        run_id=generate_run_id(),
        started_at=started.isoformat(),
        status=status,
        exit_status=exit_status,
        environment=environment_stamp(workers),
        config=config.model_dump(mode="json"),
        experiments=summaries,
        wall_time=round(time.perf_counter() - t0, 6),
    )
    write_outputs(target, report, outcomes)
    return report
