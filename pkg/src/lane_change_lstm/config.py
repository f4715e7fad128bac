"""Logging and configuration plumbing for the lane change pipeline."""

import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from rich.console import Console
from rich.logging import RichHandler

from .errors import ConfigError

HIGHD_DATA_DIR_ENV = "HIGHD_DATA_DIR"


def setup_logging(verbosity: int = 0) -> None:
    """Setup logging with environment variables and CLI verbosity."""
    # Get log level from environment variable, default to INFO
    log_level_str = os.getenv("LOG_LEVEL", "INFO").upper()

    # Map string log levels to logging constants
    log_level_map = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
    }

    log_level = log_level_map.get(log_level_str, logging.INFO)
    if verbosity > 0:
        log_level = logging.DEBUG
    elif verbosity < 0:
        log_level = max(log_level, logging.WARNING)

    log_format = os.getenv("LOG_FORMAT", "%(name)s - %(message)s")

    # Progress goes to stderr; stdout stays machine-readable
    handlers: list = [
        RichHandler(
            console=Console(stderr=True),
            show_path=False,
            rich_tracebacks=True,
        )
    ]
    log_file = os.getenv("LOG_FILE")
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(
            logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        )
        handlers.append(file_handler)

    logging.basicConfig(level=log_level, format=log_format, handlers=handlers, force=True)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging configured with level: {logging.getLevelName(log_level)}")
    if log_file:
        logger.debug(f"Log file: {log_file}")


def load_json_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON config file into a dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return data


def resolve_settings(
    defaults: Mapping[str, Any],
    file_values: Optional[Mapping[str, Any]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
    section: str = "settings",
) -> Dict[str, Any]:
    """Merge settings with precedence flag > config file > default.

    Flags whose value is None count as not given. Unknown keys in the config
    file are rejected. Each resolved value is logged with its source.
    """
    logger = logging.getLogger(__name__)
    file_values = dict(file_values or {})
    flag_values = {k: v for k, v in (flag_values or {}).items() if v is not None}

    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"Unknown {section} keys: {', '.join(unknown)}")

    resolved: Dict[str, Any] = {}
    for key, default in defaults.items():
        if key in flag_values:
            resolved[key], source = flag_values[key], "flag"
        elif key in file_values:
            resolved[key], source = file_values[key], "config"
        else:
            resolved[key], source = default, "default"
        logger.info(f"{section}.{key} = {resolved[key]!r} ({source})")
    return resolved


def highd_data_dir() -> Optional[Path]:
    """Return the licensed recordings directory from the environment, if set."""
    value = os.getenv(HIGHD_DATA_DIR_ENV)
    if not value:
        return None
    path = Path(value)
    return path if path.is_dir() else None
