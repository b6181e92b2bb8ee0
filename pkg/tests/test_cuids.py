"""
This module contains tests for the run id generation.

To run the tests in this file individually, use the following command:
    pytest tests/test_cuids.py

To run all tests in the @tests/ folder, use:
    pytest tests/

Logs generated during the tests will be displayed in the console.
"""

import logging

from app.utils.cuid import generate_run_id

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


def test_generate_run_id():
    """A run id is the ``run_`` prefix followed by a 16 character cuid."""
    run_id = generate_run_id()
    assert run_id.startswith("run_")
    assert len(run_id) == len("run_") + 16
    logger.info(f"Generated run id: {run_id}")


def test_generate_multiple_run_ids():
    """1000 run ids are pairwise distinct."""
    run_ids = [generate_run_id() for _ in range(1000)]
    unique = set(run_ids)
    assert len(unique) == 1000, f"Found {len(run_ids) - len(unique)} duplicate run ids"
    logger.info(f"Generated {len(run_ids)} unique run ids")
