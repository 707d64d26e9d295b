from typing import Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


class Path(BaseModel):
    """Sample path on a uniform grid t0, t0+dt, ..., t0+n_steps*dt"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t0: float = 0.0
    dt: float = Field(..., gt=0.0)
    n_steps: int = Field(..., ge=1)
    channels: Dict[str, np.ndarray]
    seed: int = 0
    delta: float = 0.0

    @field_validator("channels", mode="before")
    @classmethod
    def _as_arrays(cls, value):
        return {name: _frozen_array(values) for name, values in dict(value).items()}

    @model_validator(mode="after")
    def _check(self):
        for name, values in self.channels.items():
            if values.shape != (self.n_steps + 1,):
                raise ValueError(
                    f"channel {name} has shape {values.shape}, expected ({self.n_steps + 1},)"
                )
            if not np.all(np.isfinite(values)):
                raise ValueError(f"channel {name} contains non-finite values")
        return self

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"path has no {name} channel (has {sorted(self.channels)})") from None

    def increments(self, name: str = "Y") -> np.ndarray:
        return np.diff(self.channel(name))


class FilterPath(BaseModel):
    """
    Filter output aligned with an observation path.

    pi_h and sigma_hat (and ess) live on the n_steps+1 grid points;
    nu_increments holds the n_steps innovation increments.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: Literal["kalman", "wonham", "particle"]
    t0: float = 0.0
    dt: float = Field(..., gt=0.0)
    theta: float
    pi_h: np.ndarray
    sigma_hat: Optional[np.ndarray] = None
    nu_increments: np.ndarray
    ess: Optional[np.ndarray] = None

    @field_validator("pi_h", "nu_increments", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen_array(value)

    @field_validator("sigma_hat", "ess", mode="before")
    @classmethod
    def _as_optional_array(cls, value):
        return None if value is None else _frozen_array(value)

    @model_validator(mode="after")
    def _check(self):
        n = self.pi_h.shape[0] - 1
        if self.nu_increments.shape != (n,):
            raise ValueError("nu_increments must have one entry per step")
        if self.sigma_hat is not None:
            if self.sigma_hat.shape != self.pi_h.shape:
                raise ValueError("sigma_hat must share the pi_h grid")
            if np.any(self.sigma_hat < 0.0):
                raise ValueError("sigma_hat must be nonnegative")
        if self.kind == "wonham" and (np.any(self.pi_h < 0.0) or np.any(self.pi_h > 1.0)):
            raise ValueError("state probabilities must lie in [0, 1]")
        return self

    @property
    def n_steps(self) -> int:
        return self.pi_h.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


class TangentPath(BaseModel):
    """θ-derivative of the filtered drift"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t0: float = 0.0
    dt: float = Field(..., gt=0.0)
    theta: float
    pi_dot: np.ndarray

    @field_validator("pi_dot", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self):
        if not np.all(np.isfinite(self.pi_dot)):
            raise ValueError("pi_dot contains non-finite values")
        return self


class ParticleEnsemble(BaseModel):
    """Particle states with unnormalized log-weights"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x: np.ndarray
    u: np.ndarray
    log_weights: np.ndarray

    @model_validator(mode="after")
    def _check(self):
        if not (self.x.shape == self.u.shape == self.log_weights.shape) or self.x.ndim != 1:
            raise ValueError("particle arrays must be 1-d and of equal length")
        return self

    @property
    def count(self) -> int:
        return self.x.shape[0]

    def weights(self) -> np.ndarray:
        """Normalized weights; requires at least one finite log-weight"""
        top = np.max(self.log_weights)
        w = np.exp(self.log_weights - top)
        return w / w.sum()

    def log_mean_weight(self) -> float:
        """log of the mean unnormalized weight"""
        top = np.max(self.log_weights)
        return float(top + np.log(np.mean(np.exp(self.log_weights - top))))

    def effective_sample_size(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w ** 2))
