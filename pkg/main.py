import logging
import sys

from core.config.settings import settings
from presentation.cli import run


def main() -> int:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    return run()


if __name__ == "__main__":
    sys.exit(main())
