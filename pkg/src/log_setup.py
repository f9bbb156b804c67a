"""
Logging Setup
Line-delimited JSON logging for the CLI and scripts.
Library modules only call logging.getLogger(__name__); this module wires the handlers.
"""

import json
import logging
import os
from datetime import datetime, timezone

LOG_LEVEL_ENV = "GLC_LOG_LEVEL"

# Attributes every LogRecord carries; anything else was passed via `extra=`
_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", None, None)).keys()) | {"message", "asctime"}


class JsonLineFormatter(logging.Formatter):
    """Format each record as one JSON object per line"""

    def format(self, record):
        payload = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def setup_logging(level=None, json_lines=True, log_file=None):
    """
    Configure the root logger once for a CLI run

    Args:
        level (str|int): Log level; falls back to $GLC_LOG_LEVEL, then INFO
        json_lines (bool): Emit JSON lines instead of plain text
        log_file (str): Optional file that mirrors the stream handler

    Returns:
        logging.Logger: The configured root logger
    """
    if level is None:
        level = os.environ.get(LOG_LEVEL_ENV, "INFO")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    formatter = JsonLineFormatter() if json_lines else logging.Formatter(
        '%(asctime)s - %(levelname)s - %(message)s'
    )
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setFormatter(formatter)

    logging.basicConfig(level=level, handlers=handlers, force=True)
    return logging.getLogger()
