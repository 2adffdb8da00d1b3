"""
All process-wide configuration is via environment variables prefixed with ``CAM_`` (or a
``.env`` file in the working directory).

Per-run algorithm parameters live in [`ScvxConfig`][convex_cam.scvx.ScvxConfig]; the values here
are the defaults those runs inherit.
"""
from enum import Enum
from functools import lru_cache
from pathlib import Path

from pydantic import Field

from convex_cam.schema import BaseSettings

__all__ = ["CamSettings", "CovarianceFrame", "get_settings"]


class CovarianceFrame(str, Enum):
    """Orbital frame used to rotate each object's RTN covariance to ECI."""

    PER_OBJECT = "per_object"
    PRIMARY = "primary"


class CamSettings(BaseSettings):
    """Process settings."""

    class Config:
        env_prefix = "CAM_"

    LOG_LEVEL: str = "WARNING"
    RTOL: float = Field(1e-12, gt=0)
    ATOL: float = Field(1e-12, gt=0)
    SOLVER_TOL: float = Field(1e-8, gt=0)
    SOLVER_MAX_ITERATIONS: int = Field(200, ge=1)
    PARALLELISM: int = Field(1, ge=1)
    COVARIANCE_FRAME: CovarianceFrame = CovarianceFrame.PER_OBJECT
    OUTPUT_DIR: Path = Path("cam-output")


@lru_cache
def get_settings() -> CamSettings:
    """Returns the cached process settings."""
    return CamSettings()
