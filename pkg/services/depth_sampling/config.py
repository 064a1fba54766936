"""Configuration settings for the depth sampling service."""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # Logging
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json")  # json, console

    # Normal estimation (5x5 window, 5 mm radius, 5 points)
    window: int = Field(default=5, ge=3)
    radius: float = Field(default=0.005, gt=0)  # meters
    min_points: int = Field(default=5, ge=3)
    chunk_rows: int = Field(default=64, ge=1)

    # Reliability
    beta: float = Field(default=2.0, ge=1.0)
    curvature_gate: bool = Field(default=False)
    kappa_max: float = Field(default=0.1, gt=0)

    # Depth storage
    depth_scale: int = Field(default=1000, gt=0)  # units per meter

    # Completion oracle
    idw_power: float = Field(default=2.0, gt=0)
    idw_neighbors: int = Field(default=8, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="DEPTHSAMPLE_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()
