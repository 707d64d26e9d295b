from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class LikelihoodEvaluation(BaseModel):
    """Reduced log-likelihood and its score at one θ"""
    theta: float
    loglik: float
    score: float
    T: float

    @model_validator(mode="after")
    def _finite(self):
        for name in ("loglik", "score"):
            value = getattr(self, name)
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError(f"{name} is not finite")
        return self


class EstimationResult(BaseModel):
    """Maximum likelihood estimate with its normal-approximation error"""
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "theta_hat": 0.9844,
                "clamped": False,
                "fisher": 13.6,
                "theoretical_stderr": 0.0542,
                "loglik": 412.3,
            }
        }
    )

    theta_hat: float
    clamped: bool = Field(False, description="True when the estimate sits on a parameter bound")
    fisher: float = Field(0.0, ge=0.0)
    theoretical_stderr: Optional[float] = Field(None, description="(T·I)^(-1/2); None when I is 0")
    loglik: float
