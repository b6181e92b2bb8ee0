from app.core.config import settings
from app.core.logging import logger, setup_logging

setup_logging()
logger.info(f"Partial-bounds lab initialized (MAX_NODES={settings.MAX_NODES})")
