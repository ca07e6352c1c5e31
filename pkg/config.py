"""Environment defaults and TOML loading for volscope experiments."""
from __future__ import annotations

import os
import pathlib
import tomllib
from typing import Any, Mapping

# Output and parallelism defaults (overridable from the environment)
RESULTS_DIR = os.getenv("VOLSCOPE_RESULTS_DIR", "results")
DEFAULT_WORKERS = int(os.getenv("VOLSCOPE_WORKERS", "1"))
LOG_LEVEL = os.getenv("VOLSCOPE_LOG_LEVEL", "INFO")

# One-minute sampling over 252 trading days of 6.5 hours
TRADING_DAYS = 252
MINUTES_PER_DAY = 390
DEFAULT_N_STEPS = TRADING_DAYS * MINUTES_PER_DAY

DEFAULT_OMEGA = 5.0 / 12.0
DEFAULT_SUBSTEPS = 10


class ConfigurationError(ValueError):
    """Raised when an experiment configuration is missing or invalid."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


def load_toml(path: str | os.PathLike[str]) -> dict[str, Any]:
    """Read a TOML experiment file, mapping parse errors to ``ConfigurationError``."""
    config_path = pathlib.Path(path)
    if not config_path.exists():
        raise ConfigurationError("config", f"file not found: {config_path}")
    try:
        with config_path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # tomllib reports "(at line X, column Y)" in the message
        raise ConfigurationError("config", f"{config_path}: {exc}") from exc


def section(data: Mapping[str, Any], name: str, *, required: bool = False) -> dict[str, Any]:
    value = data.get(name)
    if value is None:
        if required:
            raise ConfigurationError(name, "missing section")
        return {}
    if not isinstance(value, Mapping):
        raise ConfigurationError(name, "expected a table")
    return dict(value)


def take(data: Mapping[str, Any], key: str, kind: type, default: Any = None, *, prefix: str = "") -> Any:
    """Fetch ``key`` from ``data`` coerced to ``kind``; ``default=None`` makes it required."""
    path = f"{prefix}.{key}" if prefix else key
    if key not in data:
        if default is None:
            raise ConfigurationError(path, "missing required field")
        return default
    raw = data[key]
    if kind is float and isinstance(raw, str) and raw.lower() in {"inf", "+inf", "infinity"}:
        return float("inf")
    if kind is float and isinstance(raw, bool):
        raise ConfigurationError(path, f"expected a number, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(path, f"expected {kind.__name__}, got {raw!r}") from exc


__all__ = [
    "RESULTS_DIR",
    "DEFAULT_WORKERS",
    "LOG_LEVEL",
    "TRADING_DAYS",
    "MINUTES_PER_DAY",
    "DEFAULT_N_STEPS",
    "DEFAULT_OMEGA",
    "DEFAULT_SUBSTEPS",
    "ConfigurationError",
    "load_toml",
    "section",
    "take",
]
