import logging

import pytest

from app.core.config import settings
from app.models.exceptions import ConfigError
from app.utils.worker import get_worker_count

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


def test_default_worker_count():
    """Without an explicit request the WORKERS setting is used."""
    workers = get_worker_count()
    assert workers == max(1, settings.WORKERS)
    logger.info(f"Worker count: {workers}")


def test_worker_count_capped_by_jobs():
    assert get_worker_count(8, jobs=3) == 3
    assert get_worker_count(2, jobs=10) == 2
    assert get_worker_count(4, jobs=0) == 1


def test_worker_count_rejects_zero():
    with pytest.raises(ConfigError) as excinfo:
        get_worker_count(0)
    assert excinfo.value.status == 2
