from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="STAB_SYNTH_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Run overrides (CLI flags take precedence)
    seed: Optional[int] = Field(default=None, ge=0)
    output_dir: Optional[str] = None

    # Logging
    log_level: str = "INFO"
    log_format: Literal["json", "console"] = "console"

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()


def get_settings() -> Settings:
    return Settings()
