"""Logging for GSMo runs.

Console output goes to stderr so that commands printing JSON on stdout
(`eval`, `stats`) stay machine-readable. The rotating file log keeps the
full DEBUG stream, including per-batch losses.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, MutableMapping, Optional, Tuple

from utils.config import settings

ROOT_NAME = "gsmo"
NOISY_LIBRARIES = ("matplotlib", "PIL")

DETAILED_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SIMPLE_FORMAT = "%(levelname)s: %(message)s"


def _file_handler(log_file: str, formatter: logging.Formatter) -> RotatingFileHandler:
    path = Path(log_file)
    if not path.is_absolute():
        path = settings.project_root / path
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(
        filename=str(path),
        maxBytes=10 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(formatter)
    return handler


def setup_logger(
    name: str = ROOT_NAME,
    log_file: Optional[str] = None,
    log_level: Optional[str] = None,
) -> logging.Logger:
    """Configure the package logger once; later calls return it unchanged.

    Args:
        name: Logger name
        log_file: Rotating log file (settings.log_file if not given, "" disables it)
        log_level: Level name (settings.log_level if not given)
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    logger.setLevel((log_level or settings.log_level).upper())
    logger.propagate = False

    detailed = logging.Formatter(fmt=DETAILED_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if settings.debug else logging.INFO)
    console.setFormatter(detailed if settings.debug else logging.Formatter(SIMPLE_FORMAT))
    logger.addHandler(console)

    target = settings.log_file if log_file is None else log_file
    if target:
        logger.addHandler(_file_handler(target, detailed))

    # font lookup and PNG chunk chatter
    for library in NOISY_LIBRARIES:
        logging.getLogger(library).setLevel(logging.WARNING)

    return logger


logger = setup_logger()


def get_logger(name: str) -> logging.Logger:
    """Child of the package logger, e.g. get_logger(__name__) -> gsmo.core.trainer."""
    return logging.getLogger(f"{ROOT_NAME}.{name}")


class RunLogger(logging.LoggerAdapter):
    """Prefixes every message with the run it belongs to, as in "[gsmo s3] ..."."""

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> Tuple[Any, MutableMapping[str, Any]]:
        return f"[{self.extra['run']}] {msg}", kwargs


def run_logger(name: str, label: str, seed: int) -> RunLogger:
    return RunLogger(get_logger(name), {"run": f"{label} s{seed}"})
