import enum
from typing import Any

from pydantic import BaseModel, Field


class Status(str, enum.Enum):
    """Outcome of one measured check.

    ``flag`` marks informational findings (measurements outside the validity
    window, diagnostics without an asserted bound); only ``fail`` changes
    the exit status of a run.
    """

    PASS = "pass"
    FLAG = "flag"
    FAIL = "fail"


class CheckResult(BaseModel):
    name: str
    value: float | None = None
    reference: float | None = None
    status: Status
    params: dict[str, Any] = Field(default_factory=dict)


class ExperimentSummary(BaseModel):
    """
    Summary of one experiment in a run.

    Attributes:
        index (int): Position in the expanded experiment list.
        kind (str): Experiment kind.
        status (Status): Worst status over the checks.
        params (dict): Resolved experiment parameters.
        constants (dict): Headline measured constants, each also a CSV row.
        checks (list[CheckResult]): Every row that carries a status.
        table (str | None): CSV file of this experiment, relative to the output dir.
        wall_time (float): Seconds spent in the experiment.
        error (str | None): Reason when the experiment raised.
    """

    index: int
    kind: str
    status: Status
    params: dict[str, Any] = Field(default_factory=dict)
    constants: dict[str, float | None] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    table: str | None = None
    wall_time: float = 0.0
    error: str | None = None


class EnvironmentStamp(BaseModel):
    python: str
    platform: str
    packages: dict[str, str]
    workers: int
    max_nodes: int


class RunReport(BaseModel):
    """Contents of report.json."""

    schema_version: str = "1"
    run_id: str
    started_at: str
    status: Status
    exit_status: int
    environment: EnvironmentStamp
    config: dict[str, Any]
    experiments: list[ExperimentSummary]
    wall_time: float
