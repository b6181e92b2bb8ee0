"""
This module contains tests for the per-experiment measurement log and its
CSV rendering.

To run the tests in this file individually, use the following command:
    pytest tests/test_results_log.py
"""

import csv
import io
import json
import logging
import math

from app.schemas.report import Status
from app.utils.results_log import CSV_COLUMNS, ResultLogger

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


def test_status_is_the_worst_check():
    log = ResultLogger("gaussian")
    log.log("C", 1.0, t=0.1)
    assert log.status is Status.PASS
    log.check("bounded", True, 1.0, 2.0)
    assert log.status is Status.PASS
    log.check("diagnostic", False, 3.0, 2.0, asserted=False)
    assert log.status is Status.FLAG
    log.check("bounded", False, 3.0, 2.0)
    assert log.status is Status.FAIL
    assert [c.status for c in log.checks()] == [Status.PASS, Status.FLAG, Status.FAIL]


def test_constants_are_echoed_as_rows():
    log = ResultLogger("riesz")
    log.constant("norm", 0.75, 1.0, axis=0)
    assert log.constants == {"norm": 0.75}
    row = log.rows[0]
    assert row.ratio == 0.75
    assert row.param_json == '{"axis": 0}'


def test_csv_layout():
    log = ResultLogger("cz")
    log.log("overlap", 2, None, alpha=1.5, trial=3)
    log.flag("window", math.inf, None, t=1e-3)
    log.log("missing", None)
    text = log.to_csv()
    assert "\r" not in text
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1] == ["cz", '{"alpha": 1.5, "trial": 3}', "overlap", "2", "", ""]
    assert rows[2][3] == "inf"
    assert rows[3][3:] == ["", "", ""]
    assert log.to_csv(header=False).count("\n") == 3


def test_params_are_json_safe():
    log = ResultLogger("complex_time")
    log.log("sup", 1.0, z=complex(1.0, 2.0), window=(0.1, float("nan")))
    params = json.loads(log.rows[0].param_json)
    assert params == {"window": [0.1, "nan"], "z": [1.0, 2.0]}
    assert log.checks() == []
