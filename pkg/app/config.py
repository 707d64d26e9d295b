from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional
import logging
import sys
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    """Application configuration settings"""

    # Project
    PROJECT_NAME: str = "Multiscale Filter MLE"
    VERSION: str = "1.0.0"

    # Fallback root seed when a run config carries none
    MSFM_SEED: Optional[int] = None

    # Logging (stderr; stdout is reserved for command output)
    LOG_LEVEL: str = "INFO"

    # Replicate worker cap for Monte Carlo studies
    DEFAULT_JOBS: int = 1

    # Averaging quadrature
    QUADRATURE_START_NODES: int = 8
    QUADRATURE_NODE_CAP: int = 200
    QUADRATURE_RTOL: float = 1e-10

    # Empirical invariant measure fallback (delta = 1 run)
    EMPIRICAL_SAMPLES: int = 10000
    EMPIRICAL_DT: float = 0.01
    EMPIRICAL_BURN_IN: float = 0.1

    # Finite differences
    FD_STEP: float = 1e-5
    SCORE_FD_STEP: float = 1e-4

    # Filters
    WONHAM_EPS: float = 1e-12
    DEFAULT_PARTICLES: int = 1000

    # Estimation
    MLE_GRID_POINTS: int = 41
    MLE_TOL: float = 1e-6
    FISHER_T: float = 2000.0
    FISHER_DT: float = 0.001

    # Monte Carlo studies
    MAX_FAILURE_FRACTION: float = 0.05
    HISTOGRAM_BINS: int = 25
    OVERLAY_POINTS: int = 201

    model_config = SettingsConfigDict(case_sensitive=True, env_file=".env", extra="ignore")


settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stderr handler on the package logger"""
    logger = logging.getLogger("app")
    logger.setLevel((level or settings.LOG_LEVEL).upper())
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        logger.addHandler(handler)
