from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.model import ExampleTag


class McConfig(BaseModel):
    """One row of a Monte Carlo estimation study"""
    model_config = ConfigDict(frozen=True)

    example_tag: ExampleTag
    true_alpha: float
    n_replicates: int = Field(500, ge=2)
    T: float = Field(25.0, gt=0.0)
    delta: float = Field(0.01, gt=0.0, le=1.0)
    dt: float = Field(0.02, gt=0.0)
    Sigma: float = Field(0.1, gt=0.0)
    sigma: float = Field(0.1, ge=0.0)
    theta_bounds: Optional[Tuple[float, float]] = None
    root_seed: int = 0
    fisher_T: float = Field(2000.0, ge=100.0, description="Horizon of the numeric Fisher average (chain models)")

    @model_validator(mode="after")
    def _integral_horizon(self):
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt must be integral, got {steps}")
        return self


class HistogramData(BaseModel):
    """Density histogram of the estimates plus the normal curve N(alpha, stderr²)"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bin_edges: np.ndarray
    density: np.ndarray
    overlay_x: np.ndarray
    overlay_pdf: np.ndarray

    @field_validator("bin_edges", "density", "overlay_x", "overlay_pdf", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=float)

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.bin_edges)))


class McResult(BaseModel):
    """Summary of a Monte Carlo estimation study"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: float
    estimates: np.ndarray
    mean_estimate: float
    empirical_stderr: float = Field(..., ge=0.0)
    theoretical_stderr: Optional[float] = None
    n_ok: int
    n_fail: int
    histogram: Optional[HistogramData] = None

    @field_validator("estimates", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=float)


class ConvergenceRow(BaseModel):
    """Time-averaged squared gap between the particle filter and the reduced filter"""
    delta: float
    mse: float
    mc_stderr: float


class ConvergenceTable(BaseModel):
    rows: List[ConvergenceRow]

    @property
    def mse(self) -> List[float]:
        return [row.mse for row in self.rows]
