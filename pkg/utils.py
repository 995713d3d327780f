# utils.py - Utility Functions for the CBNE solver
"""
Helper functions for logging, environment settings, report serialization
and other utilities shared by the CLI and the drivers.
"""

import os
import hashlib
import logging
import logging.handlers
import platform
from dataclasses import asdict, is_dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import orjson
import pandas as pd
import psutil
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

# =====================================
# CONFIGURATION
# =====================================
DEFAULT_OUTPUT_DIR = os.getenv("CBNE_OUTPUT_DIR", "./reports")
DEFAULT_QUADRATURE_NODES = int(os.getenv("CBNE_QUADRATURE_NODES", "32"))
DEFAULT_GRID_NODES = int(os.getenv("CBNE_GRID_NODES", "101"))
DEFAULT_SEED = int(os.getenv("CBNE_SEED", "0"))

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS | orjson.OPT_NON_STR_KEYS

LOG_FILE = Path("logs") / "cbne.log"
LOG_FORMAT = "%(asctime)s %(levelname)-8s %(name)s: %(message)s"
LOG_DATEFMT = "%Y-%m-%dT%H:%M:%S"
LOG_MAX_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5

# Loggers that stay at WARNING whatever the run level; asyncio reports every to_thread handoff
QUIET_LOGGERS = ("asyncio",)


def _file_handler(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    return logging.handlers.RotatingFileHandler(path, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUPS,
                                                encoding="utf-8")


def resolve_log_level(requested: str = "INFO") -> int:
    """LOG_LEVEL from the environment beats the requested level; unknown names fall back to INFO."""
    name = (os.getenv("LOG_LEVEL") or requested).upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> Path:
    """
    Route solver logs to stderr and a rotating file (LOG_FILE unless
    `log_file` is given). Replaces handlers from earlier calls, so the CLI
    and tests can call it repeatedly. Returns the log file path.
    """
    level = resolve_log_level(log_level)
    path = Path(log_file) if log_file else LOG_FILE
    formatter = logging.Formatter(LOG_FORMAT, LOG_DATEFMT)

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in (logging.StreamHandler(), _file_handler(path)):
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(level)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))

    logger.info(f"Logging at {logging.getLevelName(level)} to {path}")
    return path


def get_system_info() -> Dict[str, Any]:
    """Get basic, run-invariant system information for report metadata"""
    try:
        return {
            "platform": platform.system(),
            "platform_release": platform.release(),
            "python": platform.python_version(),
            "cpu_count": psutil.cpu_count(logical=True),
            "numpy": np.__version__,
        }
    except Exception as e:
        logger.warning(f"Could not get system info: {e}")
        return {"error": str(e)}


def to_jsonable(obj: Any) -> Any:
    """
    Convert dataclasses, enums, numpy scalars and non-finite floats into
    plain JSON-compatible structures.

    Args:
        obj: Any report object

    Returns:
        Nested dicts/lists/scalars
    """
    if hasattr(obj, "to_dict") and callable(obj.to_dict):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_report(report: Any) -> bytes:
    """Serialize a report to canonical JSON bytes (sorted keys, round-trip floats)."""
    return orjson.dumps(to_jsonable(report), option=JSON_OPTIONS)


def config_hash(payload: Any) -> str:
    """Short sha256 of the canonical JSON form of a config payload."""
    return hashlib.sha256(orjson.dumps(to_jsonable(payload), option=orjson.OPT_SORT_KEYS)).hexdigest()[:10]


def resolve_output_dir(output_dir: Optional[str] = None) -> Path:
    """Output directory: CBNE_OUTPUT_DIR env var overrides the argument."""
    chosen = os.getenv("CBNE_OUTPUT_DIR") or output_dir or DEFAULT_OUTPUT_DIR
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def report_path(output_dir: Path, subcommand: str, cfg_hash: str, suffix: str = ".json") -> Path:
    """
    Build an append-only artifact path: <subcommand>_<UTC stamp>_<hash><suffix>.
    A numeric counter is appended if the name is already taken.
    """
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = f"{subcommand}_{stamp}_{cfg_hash}"
    candidate = output_dir / f"{base}{suffix}"
    counter = 1
    while candidate.exists():
        candidate = output_dir / f"{base}_{counter}{suffix}"
        counter += 1
    return candidate


def write_json_report(report: Any, path: Path) -> Path:
    """Write a report as JSON. Never overwrites an existing file."""
    if path.exists():
        raise FileExistsError(f"Refusing to overwrite report {path}")
    path.write_bytes(dumps_report(report))
    logger.info(f"Report written: {path}")
    return path


def write_csv_table(frame: pd.DataFrame, path: Path) -> Path:
    """Write a table with full float precision."""
    if path.exists():
        raise FileExistsError(f"Refusing to overwrite table {path}")
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Table written: {path}")
    return path
