"""
Particle Filter Service

Particle filters of the full slow-fast system:
- bootstrap filter, particles carry (x, u) and log-weights accumulate the
  Girsanov density of each observation increment
- marginal (Rao-Blackwellized) filter for the linear class, particles carry
  x and a Kalman mean and variance of U given the x path

Both resample systematically at every step, estimate π from the weighted
cloud before resampling and return the log of the product of mean
unnormalized weights as the evidence.
"""

from typing import Optional, Tuple
import logging
import math

import numpy as np

from app.config import settings
from app.exceptions import DegeneracyError, ModelError
from app.schemas.model import ModelSpec
from app.schemas.paths import FilterPath, ParticleEnsemble, Path
from app.services.filter_service import sampled_stationary_variance
from app.services.model_service import reduce
from app.services.simulate_service import advance_fast, fast_substeps, propagate


logger = logging.getLogger(__name__)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic (low variance) resampling"""
    n = weights.shape[0]
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cumulative, positions)


def prior_variance(model: ModelSpec, theta: float, dt: float) -> float:
    """Prior variance of U shared with the stationary reduced Kalman filter on a grid of step dt"""
    return sampled_stationary_variance(reduce(model).at(theta), dt)


def initial_ensemble(model: ModelSpec, theta: float, n: int, rng: np.random.Generator, dt: float) -> ParticleEnsemble:
    """
    Prior cloud: U ~ N(0, prior_variance) for the linear class (uniform on
    {0, 1} for a chain), X from the fast invariant law given U
    """
    if model.slow_kind == "chain":
        u = rng.integers(0, 2, size=n).astype(float)
    elif model.linear is not None:
        u = math.sqrt(prior_variance(model, theta, dt)) * rng.standard_normal(n)
    else:
        u = np.zeros(n)
    return ParticleEnsemble(x=_fast_prior(model, theta, u, rng), u=u, log_weights=np.zeros(n))


def _fast_prior(model: ModelSpec, theta: float, u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if model.fast_ou_mean is None:
        return np.zeros(u.shape[0])
    mean = np.broadcast_to(np.asarray(model.fast_ou_mean(u, theta), dtype=float), u.shape)
    noise = np.broadcast_to(np.asarray(model.sigma(mean, u, theta), dtype=float), u.shape)
    return mean + noise / math.sqrt(2.0) * rng.standard_normal(u.shape[0])


def increment_log_weights(model: ModelSpec, theta: float, x: np.ndarray, u: np.ndarray, dy: float, dt: float) -> np.ndarray:
    """log of exp(h ΔY/Σ² - h² Δt/(2Σ²)) with h at the left point"""
    h = np.broadcast_to(np.asarray(model.h(x, u, theta), dtype=float), x.shape)
    s2 = model.Sigma ** 2
    return h * dy / s2 - h * h * dt / (2.0 * s2)


def _particle_count(N: Optional[int]) -> int:
    n_particles = settings.DEFAULT_PARTICLES if N is None else int(N)
    if n_particles < 2:
        raise ModelError(f"particle filter needs N >= 2, got {n_particles}")
    return n_particles


def particle_filter(
    model: ModelSpec,
    theta: float,
    obs: Path,
    N: Optional[int] = None,
    seed: int = 0,
) -> Tuple[FilterPath, float]:
    """
    Bootstrap particle filter with systematic resampling at every step

    Args:
        model: Full model
        theta: Parameter the filter runs at
        obs: Observation path (Y channel)
        N: Number of particles (>= 2)
        seed: Seed of the particle randomness

    Returns:
        (FilterPath of the posterior mean of h with per-step ESS,
         log of the product of mean unnormalized weights)

    Raises:
        DegeneracyError: If every log-weight is -inf at some step
    """
    n_particles = _particle_count(N)
    rng = np.random.default_rng(seed)
    dY = obs.increments("Y")
    dt = obs.dt
    n = dY.shape[0]

    ensemble = initial_ensemble(model, theta, n_particles, rng, dt)
    x, u = ensemble.x, ensemble.u

    pi_h = np.empty(n + 1)
    ess = np.empty(n + 1)
    pi_h[0] = float(np.mean(model.h(x, u, theta) * np.ones_like(x)))
    ess[0] = float(n_particles)
    log_evidence = 0.0

    for k in range(n):
        ensemble = ParticleEnsemble(x=x, u=u, log_weights=increment_log_weights(model, theta, x, u, dY[k], dt))
        if not np.any(np.isfinite(ensemble.log_weights)):
            raise DegeneracyError(k)
        log_evidence += ensemble.log_mean_weight()
        weights = ensemble.weights()
        ess[k + 1] = ensemble.effective_sample_size()

        x, u = propagate(model, theta, x, u, dt, rng)
        pi_h[k + 1] = float(np.dot(weights, model.h(x, u, theta) * np.ones_like(x)))
        idx = systematic_resample(weights, rng)
        x, u = x[idx], u[idx]

    nu = (dY - pi_h[:-1] * dt) / model.Sigma
    result = FilterPath(kind="particle", t0=obs.t0, dt=dt, theta=theta, pi_h=pi_h, nu_increments=nu, ess=ess)
    logger.debug(f"[Particle Filter] N={n_particles}, steps={n}, mean ESS={float(np.mean(ess)):.1f}")
    return result, log_evidence


def marginal_particle_filter(
    model: ModelSpec,
    theta: float,
    obs: Path,
    N: Optional[int] = None,
    seed: int = 0,
) -> Tuple[FilterPath, float]:
    """
    Rao-Blackwellized particle filter of a linear-class model

    Given the fast path the model is linear Gaussian in U,

        ΔY_k = a λ(x_k) U_k Δ + Σ ΔW,   U_{k+1} = (1 - β q(x_k) Δ) U_k + γ ΔV,

    so each particle keeps an exact Kalman mean and variance of U and only X
    is sampled. The fast component moves with U frozen at the particle's
    Kalman mean. Weights are the Gaussian predictive densities of ΔY_k
    relative to N(0, Σ²Δ), which makes the evidence comparable with the
    bootstrap filter's.

    Raises:
        ModelError: If the model has no linear structure or N < 2
        DegeneracyError: If every log-weight is -inf at some step
    """
    lin = model.linear
    if lin is None or model.slow_kind != "diffusion":
        raise ModelError("marginal particle filter needs a model with linear structure")
    n_particles = _particle_count(N)
    rng = np.random.default_rng(seed)
    dY = obs.increments("Y")
    dt = obs.dt
    n = dY.shape[0]

    a, beta, gamma = float(lin.a(theta)), float(lin.beta(theta)), float(lin.gamma(theta))
    noise_var = model.Sigma ** 2 * dt
    q = gamma * gamma * dt
    n_sub = fast_substeps(model, dt)

    mean = np.zeros(n_particles)
    var = np.full(n_particles, prior_variance(model, theta, dt))
    x = _fast_prior(model, theta, mean, rng)

    def gain(x):
        return a * np.broadcast_to(np.asarray(lin.lam(x), dtype=float), x.shape)

    pi_h = np.empty(n + 1)
    ess = np.empty(n + 1)
    pi_h[0] = float(np.mean(gain(x) * mean))
    ess[0] = float(n_particles)
    log_evidence = 0.0

    for k in range(n):
        c = gain(x)
        s = c * c * var * dt * dt + noise_var
        resid = dY[k] - c * mean * dt
        log_weights = -0.5 * np.log(s / noise_var) - resid * resid / (2.0 * s) + dY[k] ** 2 / (2.0 * noise_var)
        ensemble = ParticleEnsemble(x=x, u=mean, log_weights=log_weights)
        if not np.any(np.isfinite(log_weights)):
            raise DegeneracyError(k)
        log_evidence += ensemble.log_mean_weight()
        weights = ensemble.weights()
        ess[k + 1] = ensemble.effective_sample_size()

        k_gain = c * dt * var / s
        phi = 1.0 - beta * np.broadcast_to(np.asarray(lin.q(x), dtype=float), x.shape) * dt
        next_mean = phi * (mean + k_gain * resid)
        next_var = phi * phi * var * noise_var / s + q
        x = advance_fast(model, theta, x, mean, dt, rng.standard_normal((n_sub,) + x.shape))
        mean, var = next_mean, next_var
        pi_h[k + 1] = float(np.dot(weights, gain(x) * mean))

        idx = systematic_resample(weights, rng)
        x, mean, var = x[idx], mean[idx], var[idx]

    nu = (dY - pi_h[:-1] * dt) / model.Sigma
    result = FilterPath(kind="particle", t0=obs.t0, dt=dt, theta=theta, pi_h=pi_h, nu_increments=nu, ess=ess)
    logger.debug(f"[Marginal Particle Filter] N={n_particles}, steps={n}, mean ESS={float(np.mean(ess)):.1f}")
    return result, log_evidence
