from __future__ import annotations

import logging
import os
import sys
from typing import Mapping, Optional

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
ENV_VAR = "RECOVERA_LOG"

LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "critical": logging.CRITICAL,
}


def resolve_level(flag: Optional[str] = None, environ: Mapping[str, str] = os.environ) -> int:
    """The ``--logging-level`` flag wins over ``RECOVERA_LOG``; default is info."""
    name = flag or environ.get(ENV_VAR) or "info"
    return LEVELS.get(name.strip().lower(), logging.INFO)


def configure_logging(flag: Optional[str] = None) -> int:
    level = resolve_level(flag)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    return level
