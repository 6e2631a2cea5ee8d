"""
logger.py - Logging for the curiosity-driven learner

One package logger ("CuriousMisfa") with two handlers:
- console: colorama colors and ASCII level tags, INFO and above unless overridden
- file: plain text at DEBUG, rotated by size, one file per day under logs/

Module loggers are children of the package logger and carry no handlers.

Environment switches:
    CDMISFA_LOG_LEVEL    console level name (DEBUG, INFO, WARNING, ...)
    CDMISFA_LOG_TO_FILE  "0" disables the file handler
    CDMISFA_LOG_DIR      directory for log files (default: logs)

Usage:
    from core.logger import get_logger, log_exception

    logger = get_logger(__name__)
    try:
        run_trial(config, seed)
    except MisfaError as e:
        log_exception(logger, "Trial failed", e)
"""

import copy
import logging
import os
import sys
from dataclasses import dataclass
from datetime import date
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Sequence

from colorama import Fore, Style, init

init(autoreset=True)

ROOT_LOGGER_NAME = "CuriousMisfa"

CONSOLE_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"
CONSOLE_DATEFMT = "%H:%M:%S"
FILE_FORMAT = "%(asctime)s | %(name)s | %(levelname)-8s | %(funcName)s:%(lineno)d | %(message)s"
FILE_DATEFMT = "%Y-%m-%d %H:%M:%S"


class ColoredFormatter(logging.Formatter):
    """Console formatter: level tag and message wrapped in the level's color"""

    # level -> (color, ASCII tag)
    PALETTE = {
        logging.DEBUG: (Fore.CYAN, "[D]"),
        logging.INFO: (Fore.GREEN, "[+]"),
        logging.WARNING: (Fore.YELLOW, "[!]"),
        logging.ERROR: (Fore.RED, "[X]"),
        logging.CRITICAL: (Fore.RED + Style.BRIGHT, "[!!]"),
    }

    def format(self, record: logging.LogRecord) -> str:
        # The file handler formats the same record, so color a copy
        colored = copy.copy(record)
        color, tag = self.PALETTE.get(record.levelno, (Fore.WHITE, "*"))
        colored.levelname = f"{color}{tag} {record.levelname}{Style.RESET_ALL}"
        colored.msg = f"{color}{record.getMessage()}{Style.RESET_ALL}"
        colored.args = None
        return super().format(colored)


@dataclass
class LogSettings:
    """Handler settings, filled from CDMISFA_LOG_* variables"""
    console_level: int = logging.INFO
    file_level: int = logging.DEBUG
    to_file: bool = True
    directory: str = "logs"
    max_bytes: int = 100 * 1024 * 1024
    backups: int = 5

    @classmethod
    def from_env(cls) -> "LogSettings":
        settings = cls()
        level = logging.getLevelName(os.getenv("CDMISFA_LOG_LEVEL", "").upper())
        if isinstance(level, int):
            settings.console_level = level
        settings.to_file = os.getenv("CDMISFA_LOG_TO_FILE", "1") != "0"
        settings.directory = os.getenv("CDMISFA_LOG_DIR", settings.directory)
        return settings


def _console_handler(settings: LogSettings) -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(settings.console_level)
    handler.setFormatter(ColoredFormatter(fmt=CONSOLE_FORMAT, datefmt=CONSOLE_DATEFMT))
    return handler


def _file_handler(settings: LogSettings) -> logging.Handler:
    directory = Path(settings.directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"curious_misfa_{date.today():%Y%m%d}.log"
    handler = RotatingFileHandler(path, maxBytes=settings.max_bytes, backupCount=settings.backups,
                                  encoding="utf-8")
    handler.setLevel(settings.file_level)
    handler.setFormatter(logging.Formatter(fmt=FILE_FORMAT, datefmt=FILE_DATEFMT))
    return handler


def setup_logger(name: str = ROOT_LOGGER_NAME, settings: Optional[LogSettings] = None) -> logging.Logger:
    """
    Configure the package logger once; later calls return it unchanged.

    Args:
        name: Logger name
        settings: Handler settings (default: LogSettings.from_env())

    Returns:
        The configured logger
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    settings = settings or LogSettings.from_env()
    logger.setLevel(logging.DEBUG)
    logger.addHandler(_console_handler(settings))
    if settings.to_file:
        logger.addHandler(_file_handler(settings))
    logger.propagate = False
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Child of the package logger, usually get_logger(__name__).

    Example:
        >>> logger = get_logger("services.agent")
        >>> logger.info("Trial started")
    """
    root = setup_logger()
    if name is None or name == ROOT_LOGGER_NAME:
        return root
    return root.getChild(name)


def log_exception(logger_instance: logging.Logger, message: str, exc: Optional[BaseException] = None):
    """
    Log at ERROR with the traceback.

    Args:
        logger_instance: Logger to write to
        message: Context of the failure
        exc: The caught exception; without it the active exception is used
    """
    if exc is None:
        logger_instance.exception(message)
        return
    logger_instance.error(f"{message}: {type(exc).__name__}: {exc}",
                          exc_info=(type(exc), exc, exc.__traceback__))


def _fmt_vector(values: Sequence[float]) -> str:
    return "[" + ", ".join(f"{v:.6g}" for v in values) + "]"


def log_freeze_event(logger_instance: logging.Logger, u: int, iteration: int, eta: Sequence[float],
                     eta_sd: Sequence[float], policy: Sequence[int], stream: Optional[int]):
    """
    One INFO line per frozen abstraction.

    Example:
        >>> log_freeze_event(logger, u=1, iteration=642, eta=[0.008, 0.03],
        >>>                  eta_sd=[1e-4, 3e-4], policy=[0, 1, 1], stream=0)
    """
    logger_instance.info(
        f"Freeze [u={u}] | Iteration: {iteration:,} | Stream: {stream} | "
        f"Policy: {list(policy)} | Eta: {_fmt_vector(eta)} | SD: {_fmt_vector(eta_sd)}"
    )


def log_trial_summary(logger_instance: logging.Logger, seed: int, abstractions: int, iterations: int,
                      termination: str, elapsed: float):
    logger_instance.info(
        f"Trial [seed={seed}] | Abstractions: {abstractions} | "
        f"Iterations: {iterations:,} | Termination: {termination} | Elapsed: {elapsed:.1f}s"
    )
