from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = "flowcps"
    app_version: str = "0.1.0"
    log_level: str = "INFO"

    # Worker cap for rollouts and group sampling (FLOWCPS_THREADS)
    threads: int = Field(default=4, ge=1)

    # Numerics
    flow_grpo_time_clamp: float = 1e-4  # sigma for Flow-GRPO is evaluated at min(t, 1 - clamp)
    advantage_std_floor: float = 1e-8
    csv_digits: int = 17

    # Artifact file names
    model_filename: str = "model.bin"
    manifest_filename: str = "manifest.json"

    model_config = SettingsConfigDict(env_prefix="FLOWCPS_", env_file=".env", extra="ignore")


settings = Settings()
