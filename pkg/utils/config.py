"""Process-wide GSMo settings.

Experiment parameters live in the JSON experiment config (core.schemas);
this module only covers how the process runs: parallelism, the decode
cache and logging. Values come from GSMO_* environment variables or .env.
"""

import logging
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).parent.parent


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="GSMO_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # default for --jobs on train, compare and gridsearch
    jobs: int = Field(1, ge=1)

    decode_workers: int = Field(4, ge=1)
    decode_cache_enabled: bool = True
    max_cache_size_mb: int = Field(500, ge=1)
    cache_root: Optional[Path] = None

    log_level: str = "INFO"
    log_file: str = "logs/gsmo.log"
    debug: bool = False

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        if not isinstance(logging.getLevelName(value.upper()), int):
            raise ValueError(f"unknown log level {value!r}")
        return value.upper()

    @property
    def project_root(self) -> Path:
        return PROJECT_ROOT

    @property
    def cache_dir(self) -> Path:
        """Decoded-image cache root (GSMO_CACHE_ROOT, else <project>/cache)."""
        return self.cache_root or PROJECT_ROOT / "cache"


settings = Settings()
