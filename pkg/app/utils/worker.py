import os

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import ConfigError


def get_worker_count(requested: int | None = None, jobs: int | None = None) -> int:
    """
    Number of experiments the runner executes at the same time.

    The count comes from ``--workers`` when given, else from the ``WORKERS``
    setting. It never exceeds the number of jobs, so a single experiment
    does not hold idle slots.

    Args:
        requested: Explicit worker count from the command line
        jobs: Number of experiments in the run

    Returns:
        int: A worker count of at least 1

    Raises:
        ConfigError: A requested count below 1.
    """
    if requested is not None and requested < 1:
        raise ConfigError(f"--workers must be at least 1, got {requested}")
    workers = requested if requested is not None else settings.WORKERS
    cpus = os.cpu_count() or 1
    if workers > 4 * cpus:
        logger.warning(f"{workers} workers on {cpus} CPUs; dense eigensolvers will contend")
    if jobs is not None:
        workers = min(workers, max(1, jobs))
    return max(1, workers)
