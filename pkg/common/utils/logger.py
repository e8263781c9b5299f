import json
import logging
import sys
from typing import Dict, Optional

import colorlog

from common.config.config import get_logging_config

# Loggers handed out by get_logger, so the CLI can retune all of them at once
_managed_loggers: Dict[str, logging.Logger] = {}


def _parse_colors(raw_colors: Optional[str]) -> Optional[Dict[str, str]]:
    if not raw_colors:
        return None
    try:
        return json.loads(raw_colors)
    except json.JSONDecodeError:
        return None


def get_logger(name: str) -> logging.Logger:
    """
    Get a color logger based on configuration

    Records go to stderr so that reports written to stdout stay machine readable.

    Args:
        name: Logger name

    Returns:
        Configured color Logger instance
    """
    logging_config = get_logging_config()

    log_level = logging_config.level
    log_colors = _parse_colors(logging_config.colors)

    logger = colorlog.getLogger(name)

    # Prevent duplicate handler addition
    if logger.handlers:
        return logger

    if not log_level:
        log_level = 'INFO'
        print(f"Warning! Log level not configured, using default value: {log_level}",
              file=sys.stderr)

    logger.setLevel(log_level)

    handler = colorlog.StreamHandler(sys.stderr)
    formatter = colorlog.ColoredFormatter(
        logging_config.format,
        datefmt=logging_config.datefmt,
        log_colors=log_colors,
        reset=True
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    # Disable propagating log messages to parent logger
    logger.propagate = False

    _managed_loggers[name] = logger
    return logger


def set_log_level(level: str) -> None:
    """
    Change the level of every logger created through get_logger

    Args:
        level: Level name such as "DEBUG" or "WARNING"
    """
    for logger in _managed_loggers.values():
        logger.setLevel(level.upper())
