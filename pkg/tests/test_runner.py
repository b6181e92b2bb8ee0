"""
This module contains tests for running a config end to end: concurrent
execution, output files, determinism across worker counts and exit status.

To run the tests in this file individually, use the following command:
    pytest tests/test_runner.py
"""

import json
import logging

import pytest

from app.core.config import settings
from app.models.exceptions import ConfigError, MediaError, ResourceBoundError, VerificationError
from app.schemas.experiments import ExperimentKind, ExperimentPlan, parse_config
from app.schemas.report import RunReport, Status
from app.services.experiments import RunContext
from app.services.runner import ExperimentOutcome, exit_status_for, run_experiments
from app.utils.results_log import ResultLogger

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)

CONFIG = {
    "schema_version": "1",
    "space": {"dim": 1, "extent": 1.0, "N": 32, "boundary": "periodic"},
    "coefficients": {"preset": "identity", "params": {"scale": 1.0}},
    "experiments": [
        {"kind": "assembly"},
        {"kind": "cz", "params": {"trials": 5}},
        {"kind": "mihlin", "params": {"s": 1.01, "scales": [0.25, 1.0, 4.0]}},
    ],
    "seed": 3,
}


def _tables(directory):
    return {path.name: path.read_bytes() for path in sorted((directory / "tables").glob("*.csv"))}


@pytest.mark.asyncio
async def test_run_writes_report_tables_and_plots(tmp_path):
    config = parse_config(CONFIG)
    report = await run_experiments(config, output_dir=tmp_path, workers=2)

    assert report.exit_status == 0
    assert report.status in (Status.PASS, Status.FLAG)
    assert [s.kind for s in report.experiments] == ["assembly", "cz", "mihlin"]
    assert [s.table for s in report.experiments] == [
        "tables/00_assembly.csv",
        "tables/01_cz.csv",
        "tables/02_mihlin.csv",
    ]

    saved = RunReport.model_validate_json((tmp_path / "report.json").read_text())
    assert saved.run_id == report.run_id
    assert saved.environment.workers == 2
    assert saved.config["seed"] == 3

    assert set(_tables(tmp_path)) == {"00_assembly.csv", "01_cz.csv", "02_mihlin.csv"}
    script = (tmp_path / "plots" / "01_cz.py").read_text()
    assert "tables/01_cz.csv" in script
    assert "matplotlib" in script


@pytest.mark.asyncio
async def test_constants_have_csv_rows(tmp_path):
    report = await run_experiments(parse_config(CONFIG), output_dir=tmp_path, workers=1)
    cz = report.experiments[1]
    text = (tmp_path / cz.table).read_text()
    for name in cz.constants:
        assert f",{name}," in text
    assert cz.constants["max_overlap"] <= 4


@pytest.mark.asyncio
async def test_tables_do_not_depend_on_worker_count(tmp_path):
    config = parse_config(CONFIG)
    await run_experiments(config, output_dir=tmp_path / "one", workers=1)
    await run_experiments(config, output_dir=tmp_path / "three", workers=3)
    assert _tables(tmp_path / "one") == _tables(tmp_path / "three")


@pytest.mark.asyncio
async def test_resource_errors_exit_with_two(tmp_path, monkeypatch):
    config = parse_config(CONFIG)
    monkeypatch.setattr(settings, "MAX_NODES", 16)
    report = await run_experiments(config, output_dir=tmp_path, workers=1)
    assert report.exit_status == 2
    assembly = report.experiments[0]
    assert assembly.status is Status.FAIL
    assert "resource bound" in assembly.error or "MAX_NODES" in assembly.error
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["exit_status"] == 2


def _outcome(error=None, status=None):
    plan = ExperimentPlan(index=0, kind=ExperimentKind.MIHLIN, params=None)
    log = ResultLogger("00_mihlin")
    if status is not None:
        log.log("check", 1.0, status=status)
    return ExperimentOutcome(plan=plan, log=log, wall_time=0.0, error=error)


def test_exit_status_for():
    assert exit_status_for([_outcome(), _outcome(status=Status.FLAG)]) == 0
    assert exit_status_for([_outcome(status=Status.FAIL)]) == 1
    assert exit_status_for([_outcome(error=VerificationError("bad"))]) == 1
    assert exit_status_for([_outcome(error=VerificationError("bad")), _outcome(error=ResourceBoundError("big"))]) == 2


@pytest.mark.asyncio
async def test_setup_errors_exit_with_two(tmp_path, monkeypatch):
    config = parse_config(CONFIG)

    def broken(config):
        raise MediaError("plateau needs 0 <= inner < outer, got 0.3, 0.2")

    monkeypatch.setattr(RunContext, "from_config", broken)
    with pytest.raises(ConfigError) as excinfo:
        await run_experiments(config, output_dir=tmp_path, workers=1)
    assert excinfo.value.status == 2
    assert "inner < outer" in excinfo.value.reason
    assert not (tmp_path / "report.json").exists()


NEUMANN = {
    "schema_version": "1",
    "space": {"dim": 1, "extent": 8.0, "N": 32, "boundary": "neumann"},
    "coefficients": {"preset": "indicator_region", "params": {"lower": 2.0, "upper": 6.0}},
    "region": {"lower": 2.0, "upper": 6.0},
    "experiments": [
        {
            "kind": "gaussian",
            "params": {
                "localizer": "region",
                "t_grid": {"start": 8.0, "stop": 128.0, "points": 9, "allow_outside_window": True},
            },
        }
    ],
}


def _checks(report) -> dict[str, Status]:
    return {check.name: check.status for check in report.experiments[0].checks}


@pytest.mark.asyncio
async def test_indicator_growth_follows_half_dimension(tmp_path):
    report = await run_experiments(parse_config(NEUMANN), output_dir=tmp_path, workers=1)
    checks = _checks(report)
    assert checks["growth_slope_no_factor"] is Status.PASS
    assert checks["C_ref_stable_when_t_max_doubles"] is Status.PASS
    slope = report.experiments[0].constants["growth_slope_no_factor"]
    assert abs(slope - 0.5) <= 0.2


@pytest.mark.asyncio
async def test_gaussian_free_kernel_misses_half_dimension(tmp_path):
    data = json.loads(json.dumps(CONFIG))
    data["experiments"] = [
        {"kind": "gaussian", "params": {"localizer": "none", "check_half_dim_slope": True}}
    ]
    report = await run_experiments(parse_config(data), output_dir=tmp_path, workers=1)
    # a Gaussian kernel times t^{1/2} stays flat inside the validity window
    assert _checks(report)["growth_slope_no_factor"] is Status.FAIL
    assert abs(report.experiments[0].constants["growth_slope_no_factor"]) < 0.3


@pytest.mark.asyncio
async def test_weak11_flags_refinements_above_max_nodes(tmp_path, monkeypatch):
    data = json.loads(json.dumps(CONFIG))
    data["experiments"] = [{"kind": "weak11", "params": {"refinements": [16, 32, 128]}}]
    config = parse_config(data)
    monkeypatch.setattr(settings, "MAX_NODES", 64)
    report = await run_experiments(config, output_dir=tmp_path, workers=1)
    flagged = [c for c in report.experiments[0].checks if c.name == "refinement_above_max_nodes"]
    assert [c.params["N"] for c in flagged] == [128]
    assert all(c.status is Status.FLAG for c in flagged)
    rows = (tmp_path / "tables" / "00_weak11.csv").read_text().splitlines()
    assert sum(",column_l1," in row for row in rows) == 2
