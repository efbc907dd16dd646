from typing import Tuple

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    USPS_DATA_DIR: str = "data"
    OUTPUT_DIR: str = "results"
    LOG_LEVEL: str = "INFO"

    DEFAULT_SIGMA: float = 1.0
    DEFAULT_C: float = 1.0
    DEFAULT_TOL: float = 1e-3

    FULL_KERNEL_CACHE_LIMIT: int = 4096
    KERNEL_CACHE_ROWS: int = 2048

    SIGMA_GRID: str = "0.3,0.5,1.0,2.0"
    PNN_CENTER_FEATURES: bool = True
    WORKERS: int = 1

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    @field_validator("USPS_DATA_DIR", "OUTPUT_DIR", "LOG_LEVEL", "SIGMA_GRID")
    @classmethod
    def not_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("Field cannot be empty or just whitespace")
        return v

    @field_validator("DEFAULT_SIGMA", "DEFAULT_C", "DEFAULT_TOL", "FULL_KERNEL_CACHE_LIMIT", "KERNEL_CACHE_ROWS", "WORKERS")
    @classmethod
    def positive(cls, v):
        if v <= 0:
            raise ValueError("Field must be positive")
        return v

    @field_validator("SIGMA_GRID")
    @classmethod
    def valid_grid(cls, v: str) -> str:
        parse_sigma_grid(v)
        return v

    @property
    def sigma_grid(self) -> Tuple[float, ...]:
        return parse_sigma_grid(self.SIGMA_GRID)


def parse_sigma_grid(raw: str) -> Tuple[float, ...]:
    """Parses a comma separated list of window widths, e.g. "0.3,0.5,1.0"."""
    values = tuple(float(part) for part in raw.split(",") if part.strip())
    if not values or any(v <= 0 for v in values):
        raise ValueError(f"sigma grid must hold positive values, got {raw!r}")
    return values


settings = Settings()
