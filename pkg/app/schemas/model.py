from enum import Enum
from typing import Any, Callable, Literal, Optional, Tuple, Union
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Coefficient callables are evaluated on floats or numpy arrays (particle clouds)
StateFn = Callable[[Any, Any, float], Any]
ThetaFn = Callable[[float], float]


class ExampleTag(str, Enum):
    """Registered model classes"""
    EXAMPLE1 = "example1"
    EXAMPLE2 = "example2"
    EXAMPLE3 = "example3"
    CUSTOM = "custom"


class GaussianMeasure(BaseModel):
    """Normal invariant measure of the fast component"""
    model_config = ConfigDict(frozen=True)

    mean: float
    variance: float = Field(..., ge=0.0)


class EmpiricalMeasure(BaseModel):
    """Long-run empirical measure of the fast component"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    samples: np.ndarray

    @field_validator("samples", mode="before")
    @classmethod
    def _as_array(cls, value):
        arr = np.array(value, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("samples must be a non-empty 1-d array")
        arr.setflags(write=False)
        return arr


Measure = Union[GaussianMeasure, EmpiricalMeasure]


class LinearStructure(BaseModel):
    """
    Coefficients of the linear example class

        dY = a(θ) λ(X) U dt + Σ dW
        dU = -β(θ) q(X) U dt + γ(θ) dV

    Optional d_abar / d_betabar / d_gamma are analytic θ-derivatives of the
    averaged coefficients; when absent they are taken by central differences.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    a: ThetaFn
    lam: Callable[[Any], Any]
    beta: ThetaFn
    q: Callable[[Any], Any]
    gamma: ThetaFn
    d_abar: Optional[ThetaFn] = None
    d_betabar: Optional[ThetaFn] = None
    d_gamma: Optional[ThetaFn] = None


class ModelSpec(BaseModel):
    """
    Full slow-fast system

        dY = h(X,U;θ) dt + Σ dW                       (observed)
        dU = g(X,U;θ) dt + τ(X,U;θ) dV                 (hidden, slow)
        dX = b(X,U;θ)/δ dt + σ(X,U;θ)/√δ dB            (hidden, fast)

    With slow_kind="chain" the slow component is the symmetric two-state
    chain with intensity θ and g, τ are unused.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    h: StateFn
    g: Optional[StateFn] = None
    tau: Optional[StateFn] = None
    b: StateFn
    sigma: StateFn
    Sigma: float = Field(..., gt=0.0)
    delta: float = Field(..., gt=0.0, le=1.0)
    theta_bounds: Tuple[float, float]
    example_tag: ExampleTag = ExampleTag.CUSTOM
    slow_kind: Literal["diffusion", "chain"] = "diffusion"
    # When set the fast drift is fast_ou_mean(u, θ) - x with constant σ,
    # which allows exact OU transitions
    fast_ou_mean: Optional[Callable[[Any, float], Any]] = None
    linear: Optional[LinearStructure] = None
    invariant_measure: Optional[Callable[[float], Measure]] = None

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.theta_bounds
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ValueError(f"theta_bounds must satisfy lo < hi, got {self.theta_bounds}")
        if self.slow_kind == "diffusion" and (self.g is None or self.tau is None):
            raise ValueError("diffusion slow component needs g and tau")
        if self.example_tag in (ExampleTag.EXAMPLE1, ExampleTag.EXAMPLE2) and self.fast_ou_mean is None:
            raise ValueError(f"{self.example_tag.value} requires an Ornstein-Uhlenbeck fast component")
        return self

    def with_delta(self, delta: float) -> "ModelSpec":
        return self.model_validate({**dict(self), "delta": delta})

    def contains(self, theta: float) -> bool:
        lo, hi = self.theta_bounds
        return lo <= theta <= hi


class ReducedCoefficients(BaseModel):
    """Reduced linear model evaluated at one θ"""
    model_config = ConfigDict(frozen=True)

    theta: float
    abar: float
    betabar: float
    gamma: float
    Sigma: float
    d_abar: float
    d_betabar: float
    d_gamma: float
    kappa: float
    zeta: float
    d_kappa: float
    d_zeta: float

    @property
    def stationary_variance(self) -> float:
        """Stationary Riccati solution Σ²ζ/ā², with its ā→0 limit γ²/(2β̄)"""
        if self.abar == 0.0:
            return self.gamma ** 2 / (2.0 * self.betabar)
        return self.Sigma ** 2 * self.zeta / self.abar ** 2


class ReducedLinearModel(BaseModel):
    """
    Homogenized model

        dȲ = ā(θ) Ū dt + Σ dW
        dŪ = -β̄(θ) Ū dt + γ(θ) dV
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    abar: ThetaFn
    betabar: ThetaFn
    gamma: ThetaFn
    Sigma: float = Field(..., gt=0.0)
    d_abar: ThetaFn
    d_betabar: ThetaFn
    d_gamma: ThetaFn

    def at(self, theta: float) -> ReducedCoefficients:
        a = float(self.abar(theta))
        beta = float(self.betabar(theta))
        gamma = float(self.gamma(theta))
        da = float(self.d_abar(theta))
        dbeta = float(self.d_betabar(theta))
        dgamma = float(self.d_gamma(theta))
        s2 = self.Sigma ** 2
        kappa = math.sqrt(beta ** 2 + gamma ** 2 * a ** 2 / s2)
        zeta = kappa - beta
        if kappa > 0.0:
            d_kappa = (beta * dbeta + (gamma * dgamma * a ** 2 + gamma ** 2 * a * da) / s2) / kappa
        else:
            d_kappa = 0.0
        return ReducedCoefficients(
            theta=theta,
            abar=a,
            betabar=beta,
            gamma=gamma,
            Sigma=self.Sigma,
            d_abar=da,
            d_betabar=dbeta,
            d_gamma=dgamma,
            kappa=kappa,
            zeta=max(zeta, 0.0),
            d_kappa=d_kappa,
            d_zeta=d_kappa - dbeta,
        )

    def kappa(self, theta: float) -> float:
        return self.at(theta).kappa

    def zeta(self, theta: float) -> float:
        return self.at(theta).zeta
