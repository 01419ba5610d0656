"""
JSON-line event logging shared by every stage.
"""

from __future__ import annotations

import json
import logging
import os
import time
from typing import Any


def configure_logging() -> None:
    level_name = (os.getenv("LOG_LEVEL") or "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    pkg = logging.getLogger("netalign")
    pkg.setLevel(level)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format="%(message)s")
    if root.level and root.level > level:
        root.setLevel(level)


def log_event(logger: logging.Logger, msg: str, level: int = logging.INFO, **fields: Any) -> None:
    try:
        rec = {"msg": msg, **fields}
        logger.log(level, json.dumps(rec, ensure_ascii=False))
    except Exception:
        # Fallback to plain log
        logger.log(level, "%s | %s", msg, fields)


def ms_since(t0: float) -> int:
    return int((time.perf_counter() - t0) * 1000)
