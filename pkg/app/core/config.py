# app/core/config.py
import os


def _default_workers() -> int:
    return max(1, min(8, (os.cpu_count() or 1)))


class Settings:
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
    MAX_NODES: int = int(os.getenv("MAX_NODES", "4096"))
    if MAX_NODES < 1:
        raise ValueError("MAX_NODES must be a positive integer")
    WORKERS: int = int(os.getenv("WORKERS", str(_default_workers())))
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs/latest")
    LOG_DIR: str = os.getenv("LOG_DIR", "logs")
    SCHEMA_VERSION: str = "1"  # NOTE: bump together with app/schemas/experiments.py
    REFERENCE_DECAY: float = 0.125
    NOISE_FLOOR: float = 1e-12


settings = Settings()
