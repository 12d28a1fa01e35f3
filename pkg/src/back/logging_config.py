"""Colored stderr logging that stays readable next to tqdm progress bars."""

import logging
import os
import sys
from typing import Optional

from tqdm import tqdm

DEFAULT_LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class ColoredFormatter(logging.Formatter):
    """Wrap each record in the ANSI color of its level."""

    COLORS = {
        "DEBUG": "\033[94m",  # Blue
        "INFO": "\033[92m",  # Green
        "WARNING": "\033[93m",  # Yellow
        "ERROR": "\033[91m",  # Red
        "CRITICAL": "\033[91m\033[1m",  # Bold Red
        "RESET": "\033[0m",
    }

    def __init__(self, fmt: str = LOG_FORMAT, datefmt: str = DATE_FORMAT, use_color: bool = True):
        super().__init__(fmt, datefmt=datefmt)
        self.use_color = use_color

    def format(self, record):
        message = super().format(record)
        if not self.use_color:
            return message
        return f"{self.COLORS.get(record.levelname, '')}{message}{self.COLORS['RESET']}"


class TqdmHandler(logging.StreamHandler):
    """Emit through ``tqdm.write`` so an active bar is redrawn below the message."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def resolve_level(level: Optional[str] = None) -> int:
    """Numeric level for ``level``, else $LOG_LEVEL, else INFO.

    Raises:
        ValueError: the name is not a logging level

    """
    name = (level or os.getenv("LOG_LEVEL") or DEFAULT_LOG_LEVEL).upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        raise ValueError(f"Invalid log level: {name}")
    return numeric


def setup_logger(name: str = "cardiora", level: Optional[str] = None) -> logging.Logger:
    """Configure and return the pipeline logger.

    Args:
        name: Logger name
        level: Level name; falls back to LOG_LEVEL, then INFO. An unknown
            name in the environment falls back to INFO instead of failing import.

    Returns:
        Configured logger instance

    """
    try:
        numeric = resolve_level(level)
    except ValueError:
        if level is not None:
            raise
        numeric = logging.INFO

    logger = logging.getLogger(name)
    logger.setLevel(numeric)
    if not logger.handlers:
        handler = TqdmHandler(sys.stderr)
        handler.setFormatter(ColoredFormatter(use_color=sys.stderr.isatty()))
        logger.addHandler(handler)
    for handler in logger.handlers:
        handler.setLevel(numeric)
    logger.propagate = False
    return logger


logger = setup_logger()


def set_log_level(level: str) -> None:
    """Set the level of the shared logger and its handlers.

    Raises:
        ValueError: the name is not a logging level

    """
    numeric = resolve_level(level)
    logger.setLevel(numeric)
    for handler in logger.handlers:
        handler.setLevel(numeric)
