"""Utility for the long-format measurement log of an experiment."""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

from app.core.logging import logger
from app.schemas.report import CheckResult, Status

CSV_COLUMNS = ("experiment", "param_json", "value_name", "value", "reference", "ratio")


def _number(value: float | None) -> str:
    if value is None:
        return ""
    return "%.12g" % float(value)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, "item"):
        return _jsonable(value.item())
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


@dataclass
class ResultRow:
    experiment: str
    params: dict[str, Any]
    value_name: str
    value: float | None
    reference: float | None = None
    status: Status | None = None

    @property
    def ratio(self) -> float | None:
        if self.value is None or not self.reference:
            return None
        return self.value / self.reference

    @property
    def param_json(self) -> str:
        return json.dumps(_jsonable(self.params), sort_keys=True)

    def csv_fields(self) -> list[str]:
        return [
            self.experiment,
            self.param_json,
            self.value_name,
            _number(self.value),
            _number(self.reference),
            _number(self.ratio),
        ]


@dataclass
class ResultLogger:
    """Collects the rows of one experiment.

    Every number that reaches report.json goes through here, so each
    constant and check in the report has a matching CSV row.
    """

    experiment: str
    rows: list[ResultRow] = field(default_factory=list)
    constants: dict[str, float | None] = field(default_factory=dict)

    def log(
        self,
        value_name: str,
        value: float | None,
        reference: float | None = None,
        status: Status | None = None,
        **params,
    ) -> ResultRow:
        """Record one row.

        Args:
            value_name: Name of the measured quantity
            value: Measured value
            reference: Reference the value is compared against, if any
            status: Outcome when the row is a check
            **params: Parameters identifying the row (t, j, n, ...)

        Returns:
            The recorded row
        """
        row = ResultRow(
            experiment=self.experiment,
            params=params,
            value_name=value_name,
            value=None if value is None else float(value),
            reference=None if reference is None else float(reference),
            status=status,
        )
        self.rows.append(row)
        if status is Status.FLAG:
            logger.warning(f"{self.experiment}: {value_name} flagged ({_number(row.value)})")
        elif status is Status.FAIL:
            logger.warning(f"{self.experiment}: {value_name} failed ({_number(row.value)})")
        return row

    def constant(self, value_name: str, value: float | None, reference: float | None = None, **params):
        """Record a headline constant that is also echoed in the report."""
        self.constants[value_name] = None if value is None else float(value)
        return self.log(value_name, value, reference, **params)

    def check(
        self,
        value_name: str,
        passed: bool,
        value: float | None,
        reference: float | None = None,
        asserted: bool = True,
        **params,
    ) -> ResultRow:
        """Record a check: fail (or flag when not asserted) unless it passed."""
        if passed:
            status = Status.PASS
        else:
            status = Status.FAIL if asserted else Status.FLAG
        return self.log(value_name, value, reference, status=status, **params)

    def flag(self, value_name: str, value: float | None, reference: float | None = None, **params):
        return self.log(value_name, value, reference, status=Status.FLAG, **params)

    @property
    def status(self) -> Status:
        statuses = {row.status for row in self.rows}
        if Status.FAIL in statuses:
            return Status.FAIL
        if Status.FLAG in statuses:
            return Status.FLAG
        return Status.PASS

    def checks(self) -> list[CheckResult]:
        return [
            CheckResult(
                name=row.value_name,
                value=row.value,
                reference=row.reference,
                status=row.status,
                params=_jsonable(row.params),
            )
            for row in self.rows
            if row.status is not None
        ]

    def to_csv(self, header: bool = True) -> str:
        """Rows as CSV text with LF line endings."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        if header:
            writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buffer.getvalue()
