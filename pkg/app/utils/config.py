from functools import lru_cache
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-level settings, read from the environment and an optional `.env` file.

    - **Attributes**:
        - `log_level`: Level for the rich log handler (`SYNCWATCH_LOG_LEVEL`).
        - `num_threads`: Torch intra-op threads; 1 is the bitwise-reproducible reference mode.
        - `window_stride`: Stride between scoring/training windows, in frames.
        - `eval_workers`: Threads used by `eval` to score files concurrently.
    """
    log_level: str = "INFO"
    num_threads: int = Field(default=1, ge=1)
    window_stride: int = Field(default=25, ge=1)
    eval_workers: int = Field(default=1, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="SYNCWATCH_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Function to get the cached settings
@lru_cache
def get_settings() -> Settings:
    """
    Returns the process settings, built once.
    """
    return Settings()
