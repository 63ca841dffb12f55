import logging
import sys

from config import config
from core.cli import run

# ====================== LOGGING SETUP ======================
handlers = [logging.StreamHandler()]
if config.LOG_FILE:
    handlers.append(logging.FileHandler(config.LOG_FILE))

logging.basicConfig(
    level=logging.DEBUG if config.DEBUG else config.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)

# ====================== ENTRY POINT ======================
if __name__ == "__main__":
    sys.exit(run())
