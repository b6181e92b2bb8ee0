"""
Logging configuration module for the partial-bounds laboratory.

This module sets up logging with both console and file handlers. Logs are written to:
- Console (stdout) for following long experiment suites
- Rotating log files in the configured log directory

The log files use rotation to prevent unbounded disk usage:
- Maximum file size: 10MB
- Keeps up to 5 backup files

Log Format:
    timestamp - logger_name - log_level - message
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from app.core.config import settings

# Create public logger instance
logger = logging.getLogger("partialbounds")


def setup_logging(debug: bool | None = None):
    """
    Configure application-wide logging settings.

    When debug output is enabled this attaches:
    - a console handler writing to stdout
    - a rotating file handler writing to ``<LOG_DIR>/partialbounds.log``

    The log files rotate when they reach 10MB, keeping up to 5 backup files.
    Otherwise the logger gets a NullHandler so library use stays silent.

    Args:
        debug: Overrides ``settings.DEBUG`` when given.
    """
    if debug is None:
        debug = settings.DEBUG

    # Repeated calls (tests, nested CLI invocations) must not stack handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    if debug:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)

        logger.setLevel(logging.INFO)
        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(formatter)

        file_handler = RotatingFileHandler(
            log_dir / "partialbounds.log",
            maxBytes=10485760,  # 10MB
            backupCount=5,
        )
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(formatter)

        logger.addHandler(console_handler)
        logger.addHandler(file_handler)
    else:
        logger.addHandler(logging.NullHandler())
