"""
Configuration management for the qplane verification workbench.
"""
from typing import List, Tuple

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="QPLANE_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Configuration
    app_name: str = "qplane workbench"
    app_version: str = "1.0.0"
    debug: bool = False
    environment: str = "production"

    # Server Configuration
    host: str = "0.0.0.0"
    port: int = 8000
    workers: int = 4

    # Default run
    default_n: int = 2
    default_q: str = "1/2"
    default_N: int = 8
    default_M: int = 8
    default_d: int = 3
    default_samples: List[float] = [0.6, 0.9, 1.0]

    # Tolerances
    tolerance: float = 1e-10
    spectrum_rtol: float = 1e-12
    equivalence_tol: float = 1e-12
    hermitian_tol: float = 1e-12
    vanishing_tol: float = 1e-12
    separation_tol: float = 1e-9
    c0_tol: float = 1e-6

    # Numerics
    dense_limit: int = 512
    extremal_eigenvalues: int = 6
    power_iterations: int = 500
    seed: int = 20240229
    sweep_sizes: Tuple[int, ...] = (4, 6, 8, 10)
    vanishing_grid_points: int = 64
    symbol_pairs: int = 20

    # Symbolic suites
    identity_degree: int = 3
    confluence_threshold: int = 50_000
    confluence_sample_size: int = 5_000

    # Logging Configuration
    log_level: str = "INFO"
    log_format: str = "json"

    # Monitoring
    enable_metrics: bool = True

    @field_validator("tolerance", "spectrum_rtol", "equivalence_tol", "hermitian_tol",
                     "vanishing_tol", "separation_tol", "c0_tol")
    @classmethod
    def validate_positive_tolerance(cls, v):
        """Validate tolerances."""
        if v <= 0:
            raise ValueError("Tolerances must be positive")
        return v

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v):
        """Validate log renderer name."""
        if v not in ("json", "console"):
            raise ValueError("log_format must be 'json' or 'console'")
        return v

    @field_validator("sweep_sizes")
    @classmethod
    def validate_sweep(cls, v):
        """Sweep sizes must increase."""
        if list(v) != sorted(set(v)):
            raise ValueError("sweep_sizes must be strictly increasing")
        return v


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get application settings."""
    return settings
