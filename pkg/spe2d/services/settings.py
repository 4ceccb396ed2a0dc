"""
Configuration loading: TOML run configs and process-level settings.

Run configs are validated into frozen ``SimConfig`` trees; process settings
(thread count, log level, output root) come from the environment, optionally
seeded from a ``.env`` file.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from functools import lru_cache
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from spe2d.errors import ConfigError
from spe2d.schemas.schemas import SimConfig

load_dotenv()

SECTIONS = ("domain", "physics", "noise", "forcing", "initial", "numerics", "output")


class Settings(BaseModel):
    threads: int = 1
    log_level: str = "INFO"
    outdir: str = "runs"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Process settings from SPE2D_* environment variables."""
    raw_threads = os.getenv("SPE2D_THREADS", "1")
    try:
        threads = max(1, int(raw_threads))
    except ValueError:
        raise ConfigError("SPE2D_THREADS", f"expected an integer, got {raw_threads!r}")
    return Settings(
        threads=threads,
        log_level=os.getenv("SPE2D_LOG_LEVEL", "INFO"),
        outdir=os.getenv("SPE2D_OUTDIR", "runs"),
    )


def _key_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def _from_validation_error(exc: ValidationError) -> ConfigError:
    first = exc.errors()[0]
    path = _key_path(first)
    message = first.get("msg", "invalid value")
    if first.get("type") == "extra_forbidden":
        message = "unknown key (strict mode)"
    return ConfigError(path, message)


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    """Validate a nested mapping into a SimConfig."""
    unknown = [key for key in data if key not in SECTIONS]
    if unknown:
        raise ConfigError(unknown[0], "unknown section (strict mode)")
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        raise _from_validation_error(exc) from exc


def parse_config(path: str | Path) -> SimConfig:
    """Read and validate a TOML run config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("", f"config file not found: {path}")
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from exc
    return config_from_dict(data)


def default_config() -> SimConfig:
    return SimConfig()


def override_config(cfg: SimConfig, updates: dict[str, Any]) -> SimConfig:
    """Return a copy of ``cfg`` with dotted-key overrides, revalidated."""
    data = cfg.model_dump()
    for dotted, value in updates.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(dotted, "override keys look like 'section.key'")
        data[section][key] = value
    return config_from_dict(data)


def normalized_config(cfg: SimConfig) -> str:
    """Canonical JSON text of a config (sorted keys, no whitespace variance)."""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(normalized_config(cfg).encode("utf-8")).hexdigest()
