from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.schemas.model import ExampleTag


Subcommand = Literal["simulate", "filter", "estimate", "fisher", "mc-table", "converge", "hist"]


class RunConfig(BaseModel):
    """Validated settings for one CLI invocation"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    subcommand: Subcommand
    example: ExampleTag
    alpha: Optional[float] = Field(None, description="True parameter used to generate data")
    theta: Optional[float] = Field(None, description="Parameter the filter runs at (defaults to alpha)")
    T: float = Field(25.0, gt=0.0)
    delta: float = Field(0.01, gt=0.0, le=1.0)
    dt: float = Field(0.02, gt=0.0)
    Sigma: float = Field(0.1, gt=0.0)
    sigma: float = Field(0.1, ge=0.0)
    seed: Optional[int] = Field(None, ge=0)
    n_replicates: int = Field(500, ge=2)
    n_particles: int = Field(1000, ge=2)
    n_bins: int = Field(25, ge=2)
    theta_lo: Optional[float] = None
    theta_hi: Optional[float] = None
    alphas: Optional[List[float]] = None
    deltas: List[float] = Field(default_factory=lambda: [0.1, 0.04, 0.01])
    method: Literal["reduced", "particle", "marginal"] = "reduced"
    jobs: int = Field(1, ge=1)
    fisher_T: float = Field(2000.0, ge=100.0)
    input: Optional[str] = None
    output: Optional[str] = None
    profile: Optional[str] = None

    @field_validator("alphas", "deltas", mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("deltas")
    @classmethod
    def _check_deltas(cls, value):
        if len(value) < 2:
            raise ValueError("needs at least two values")
        if any(d <= 0.0 or d > 1.0 for d in value):
            raise ValueError("values must lie in (0, 1]")
        if any(b > a for a, b in zip(value, value[1:])):
            raise ValueError("values must be non-increasing")
        return value

    @property
    def filter_theta(self) -> Optional[float]:
        return self.alpha if self.theta is None else self.theta
