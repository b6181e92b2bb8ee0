import sys

from dotenv import load_dotenv

load_dotenv()

from app.cli import main  # noqa: E402
from app.core.logging import setup_logging  # noqa: E402

if __name__ == "__main__":
    setup_logging()
    sys.exit(main())
