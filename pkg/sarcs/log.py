"""Logging configuration: stdlib logging with pipeline-aware defaults."""

import logging
import sys
from pathlib import Path

ROOT_LOGGER = "sarcs"


def setup_logging(level: str = "INFO", log_file: Path | None = None) -> logging.Logger:
    """Configure the root sarcs logger. Returns configured logger.

    Calling again replaces the handlers, so a later call with a log file
    (for example after the experiment document is read) takes effect.
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))

    formatter = logging.Formatter(
        fmt="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    logger.addHandler(console)

    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(str(log_file))
        fh.setFormatter(formatter)
        logger.addHandler(fh)

    return logger


def get_logger(module_name: str) -> logging.Logger:
    """Get a child logger. Usage: logger = get_logger(__name__)"""
    return logging.getLogger(f"{ROOT_LOGGER}.{module_name}")
