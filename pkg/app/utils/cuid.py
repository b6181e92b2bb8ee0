from typing import NewType

from cuid2 import Cuid

RUN_ID_GENERATOR: Cuid = Cuid(length=16)

RunId = NewType("RunId", str)


def generate_run_id() -> RunId:
    """Identifier stamped into report.json; never written to CSV tables."""
    return RunId(f"run_{RUN_ID_GENERATOR.generate()}")
