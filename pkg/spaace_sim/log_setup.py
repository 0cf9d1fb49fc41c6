import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

from config import LOG_FORMAT, LOG_LEVEL

TEXT_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """
    Configures the root logger once for CLI and server processes.

    Args:
        level (str): Logging level name; defaults to SPAACE_LOG_LEVEL.
        fmt (str): 'json' for one JSON object per record, anything else for plain text.
    """
    level = (level or LOG_LEVEL).upper()
    fmt = (fmt or LOG_FORMAT).lower()

    handler = logging.StreamHandler(sys.stderr)
    if fmt == 'json':
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
    # matplotlib is chatty at DEBUG
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
