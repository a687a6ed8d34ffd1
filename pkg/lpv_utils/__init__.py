"""Shared utilities for the incremental LPV toolkit.

This module configures logging for command-line runs. Logs are written to a
timestamped file located in the ``log_dir`` of the active experiment
configuration. Library modules only create named loggers; configuring handlers
is left to the entry points so that importing the toolkit has no side effects.
"""

from __future__ import annotations

import logging
from datetime import datetime
from pathlib import Path
from typing import Union

from .cache import SolutionCache
from .files import atomic_write_text, format_float, write_csv

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(log_dir: Union[str, Path] = ".", level: int = logging.INFO) -> Path:
    """Configure root logging to write into ``log_dir``.

    Parameters
    ----------
    log_dir:
        Directory receiving the log file. Created when missing.
    level:
        Root logger level.

    Returns
    -------
    Path
        The path to the log file being used.
    """

    log_dir = Path(log_dir).expanduser()
    log_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = log_dir / f"{timestamp}.log"

    logging.basicConfig(
        filename=str(log_file),
        format=LOG_FORMAT,
        level=level,
        force=True,
    )
    return log_file


__all__ = [
    "SolutionCache",
    "atomic_write_text",
    "format_float",
    "setup_logging",
    "write_csv",
]
