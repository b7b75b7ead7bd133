import os
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from core.errors import ValidationError

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "htmax.json"
DEFAULT_DENSE_CAP = 10 ** 6


@dataclass
class Settings:
    """Runtime settings read from config/htmax.json and the environment"""
    iteration: Dict[str, Any] = field(default_factory=dict)
    dense_cap: int = DEFAULT_DENSE_CAP
    log_level: str = "INFO"
    working_rank: int = 5
    bench: Dict[str, Any] = field(default_factory=lambda: {"repeats": 3, "rank": 5})


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(float(raw))
    except ValueError:
        raise ValidationError(f"{name} must be a number, got {raw!r}")
    if value < 1:
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def load_settings(path: Optional[str] = None) -> Settings:
    """Load settings from JSON, then apply HTMAX_* environment overrides"""
    config_path = Path(path or os.getenv("HTMAX_CONFIG") or DEFAULT_CONFIG_PATH)
    settings = Settings()

    if config_path.exists():
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"Failed to read settings from {config_path}: {e}")
        try:
            settings = Settings(**data)
        except TypeError as e:
            raise ValidationError(f"Unknown key in settings file {config_path}: {e}")
    else:
        logger.warning(f"Settings file {config_path} not found, using built-in defaults")

    if int(settings.working_rank) < 1:
        raise ValidationError(f"working_rank must be >= 1, got {settings.working_rank}")

    cap = _env_int("HTMAX_DENSE_CAP")
    if cap is not None:
        settings.dense_cap = cap
    level = os.getenv("HTMAX_LOG_LEVEL")
    if level:
        settings.log_level = level.upper()
    return settings


def dense_cap() -> int:
    """Current densification cap (HTMAX_DENSE_CAP wins over the settings file)"""
    cap = _env_int("HTMAX_DENSE_CAP")
    if cap is not None:
        return cap
    return int(load_settings().dense_cap)
