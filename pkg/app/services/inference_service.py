"""
Inference Service

Reduced log-likelihood of the observations, its score, the maximum
likelihood estimator and Fisher-information based standard errors.

The reduced filter is the Kalman-Bucy filter for models of the linear class
and the Wonham filter for chain-driven models.
"""

from typing import Callable, Optional, Sequence
import logging
import math

import numpy as np

from app.config import settings
from app.exceptions import ModelError, MultiscaleError
from app.schemas.inference import EstimationResult, LikelihoodEvaluation
from app.schemas.model import ModelSpec, ReducedLinearModel
from app.schemas.paths import FilterPath, Path, TangentPath
from app.services.filter_service import kalman_bucy, tangent_filter, wonham_filter
from app.services.model_service import reduce
from app.services.simulate_service import simulate_reduced, simulate_reduced_chain


logger = logging.getLogger(__name__)


def _is_chain(model: ModelSpec) -> bool:
    return model.slow_kind == "chain"


def reduced_filter(model: ModelSpec, theta: float, obs: Path, reduced: Optional[ReducedLinearModel] = None) -> FilterPath:
    """Kalman-Bucy filter (linear class) or Wonham filter (chain) at θ"""
    if _is_chain(model):
        return wonham_filter(theta, model.Sigma, obs)
    return kalman_bucy(reduced or reduce(model), theta, obs)


def log_likelihood_from_drift(pi: np.ndarray, dY: np.ndarray, dt: float, Sigma: float) -> float:
    """
    Left-point discretization of (1/Σ²)(∫π dY - ½∫π² ds)

    Args:
        pi: Filtered drift at the left end of each step (length n)
        dY: Observation increments (length n)
    """
    pi = np.asarray(pi, dtype=float)
    dY = np.asarray(dY, dtype=float)
    return float((np.dot(pi, dY) - 0.5 * np.dot(pi, pi) * dt) / Sigma ** 2)


def reduced_log_likelihood(model: ModelSpec, theta: float, obs: Path) -> float:
    """
    Reduced log-likelihood ρ̄_T(θ) of the Y channel of obs

    Raises:
        ModelError: If θ lies outside the model bounds
    """
    if not model.contains(theta):
        raise ModelError(f"theta={theta} outside bounds {model.theta_bounds}")
    flt = reduced_filter(model, theta, obs)
    return log_likelihood_from_drift(flt.pi_h[:-1], obs.increments("Y"), obs.dt, model.Sigma)


def tangent_path(model: ModelSpec, theta: float, obs: Path) -> TangentPath:
    """
    θ-derivative of the filtered drift

    Linear class: tangent Kalman filter. Chain: central difference of the
    Wonham drift with step SCORE_FD_STEP.
    """
    if _is_chain(model):
        h = settings.SCORE_FD_STEP
        upper = wonham_filter(theta + h, model.Sigma, obs).pi_h
        lower = wonham_filter(max(theta - h, 0.0), model.Sigma, obs).pi_h
        width = theta + h - max(theta - h, 0.0)
        return TangentPath(t0=obs.t0, dt=obs.dt, theta=theta, pi_dot=(upper - lower) / width)
    reduced = reduce(model)
    flt = kalman_bucy(reduced, theta, obs)
    return tangent_filter(reduced, theta, obs, flt)


def score(model: ModelSpec, theta: float, obs: Path) -> float:
    """
    Derivative of ρ̄_T at θ

    Linear class: (1/Σ²) Σ_k π̇_k (ΔY_k - π_k Δt) from the tangent filter.
    Chain: central difference of reduced_log_likelihood with step SCORE_FD_STEP.
    """
    if _is_chain(model):
        h = settings.SCORE_FD_STEP
        lo, hi = model.theta_bounds
        upper, lower = min(theta + h, hi), max(theta - h, lo)
        return (reduced_log_likelihood(model, upper, obs) - reduced_log_likelihood(model, lower, obs)) / (upper - lower)

    reduced = reduce(model)
    flt = kalman_bucy(reduced, theta, obs)
    tan = tangent_filter(reduced, theta, obs, flt)
    dY = obs.increments("Y")
    return float(np.dot(tan.pi_dot[:-1], dY - flt.pi_h[:-1] * obs.dt) / model.Sigma ** 2)


def evaluate_likelihood(model: ModelSpec, theta: float, obs: Path) -> LikelihoodEvaluation:
    """Log-likelihood and score at θ"""
    return LikelihoodEvaluation(
        theta=theta,
        loglik=reduced_log_likelihood(model, theta, obs),
        score=score(model, theta, obs),
        T=obs.T,
    )


def likelihood_profile(model: ModelSpec, obs: Path, grid: Sequence[float]) -> np.ndarray:
    """ρ̄_T on a θ grid; failed or non-finite evaluations become -inf"""
    values = np.empty(len(grid))
    for i, theta in enumerate(grid):
        try:
            value = reduced_log_likelihood(model, float(theta), obs)
        except MultiscaleError as e:
            logger.debug(f"[Likelihood] evaluation failed at theta={theta}: {e}")
            value = -math.inf
        values[i] = value if math.isfinite(value) else -math.inf
    return values


def golden_section_max(objective: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """
    Golden-section search for the maximizer of a unimodal objective on [a, b]

    Stops once the bracket is no wider than tol and returns its midpoint.
    """
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    inv_phi_sq = (3.0 - math.sqrt(5.0)) / 2.0

    dist = b - a
    if dist <= tol:
        return 0.5 * (a + b)

    c = a + inv_phi_sq * dist
    d = a + inv_phi * dist
    yc = objective(c)
    yd = objective(d)

    while dist > tol:
        if yc > yd:
            b = d
            d = c
            yd = yc
            dist = inv_phi * dist
            c = a + inv_phi_sq * dist
            yc = objective(c)
        else:
            a = c
            c = d
            yc = yd
            dist = inv_phi * dist
            d = a + inv_phi * dist
            yd = objective(d)

    return 0.5 * (a + b)


def mle(model: ModelSpec, obs: Path, compute_fisher: bool = True) -> EstimationResult:
    """
    Maximum likelihood estimate of θ from the reduced likelihood

    A grid of MLE_GRID_POINTS values over the bounds locates the global
    maximum; golden-section search refines it between the neighbouring grid
    points. An argmax on an end point of the grid is returned as that bound
    with clamped=True.

    Args:
        model: Full model (bounds and reduced filter come from it)
        obs: Observation path
        compute_fisher: Attach I(θ̂) and the theoretical standard error

    Raises:
        ModelError: If no grid point yields a finite likelihood
    """
    lo, hi = model.theta_bounds
    grid = np.linspace(lo, hi, settings.MLE_GRID_POINTS)
    values = likelihood_profile(model, obs, grid)
    if not np.any(np.isfinite(values)):
        raise ModelError("reduced likelihood is non-finite on the whole parameter grid")

    i = int(np.argmax(values))
    if i == 0 or i == len(grid) - 1:
        theta_hat, clamped = float(grid[i]), True
        loglik = float(values[i])
    else:
        def objective(theta: float) -> float:
            value = reduced_log_likelihood(model, theta, obs)
            return value if math.isfinite(value) else -math.inf

        theta_hat = golden_section_max(objective, float(grid[i - 1]), float(grid[i + 1]), settings.MLE_TOL)
        theta_hat = min(max(theta_hat, lo), hi)
        clamped = False
        loglik = reduced_log_likelihood(model, theta_hat, obs)

    fisher = 0.0
    stderr = None
    if compute_fisher:
        fisher = fisher_information(model, theta_hat, seed=obs.seed)
        if fisher > 0.0:
            stderr = theoretical_stderr(fisher, obs.T)

    return EstimationResult(
        theta_hat=theta_hat,
        clamped=clamped,
        fisher=fisher,
        theoretical_stderr=stderr,
        loglik=loglik,
    )


def fisher_closed(reduced: ReducedLinearModel, alpha: float) -> float:
    """
    Fisher information of the linear class in closed form

        I = β̄'²/(2β̄) + κ'²/(2κ) - 2β̄'κ'/(β̄ + κ)

    Raises:
        ModelError: If κ(α) = 0
    """
    co = reduced.at(alpha)
    if co.kappa <= 0.0:
        raise ModelError(f"kappa vanishes at alpha={alpha}; Fisher information is undefined")
    dbeta, dkappa = co.d_betabar, co.d_kappa
    value = dkappa ** 2 / (2.0 * co.kappa) - 2.0 * dbeta * dkappa / (co.betabar + co.kappa)
    if dbeta != 0.0:
        value += dbeta ** 2 / (2.0 * co.betabar)
    return max(value, 0.0)


def fisher_example1(alpha: float, Sigma: float, sigma: float) -> float:
    """Closed form of I(α) for Example 1"""
    s2 = Sigma ** 2
    return math.exp(4.0 * alpha + sigma ** 2) / (
        2.0 * s2 ** 2 * (1.0 + math.exp(2.0 * alpha + sigma ** 2 / 2.0) / s2) ** 1.5
    )


def fisher_example2(alpha: float, Sigma: float, sigma: float) -> float:
    """Closed form of I(α) for Example 2"""
    root = math.sqrt(1.0 / Sigma ** 2 + math.exp(2.0 * alpha + sigma ** 2 / 2.0))
    mean_rate = math.exp(alpha + sigma ** 2 / 4.0)
    return (
        mean_rate / 2.0
        + math.exp(4.0 * alpha + sigma ** 2) / (2.0 * root ** 3)
        - 2.0 * math.exp(3.0 * alpha + 0.75 * sigma ** 2) / (root * (mean_rate + root))
    )


def fisher_numeric(model: ModelSpec, alpha: float, T: float, dt: float, seed: int) -> float:
    """
    Ergodic average (1/(TΣ²)) ∫ |π̇_s|² ds along one reduced path at α

    Raises:
        ModelError: If T < 100
    """
    if T < 100.0:
        raise ModelError(f"numeric Fisher information needs T >= 100 for the ergodic average, got {T}")
    if _is_chain(model):
        obs = simulate_reduced_chain(alpha, model.Sigma, T, dt, seed)
    else:
        obs = simulate_reduced(reduce(model), alpha, T, dt, seed)
    tan = tangent_path(model, alpha, obs)
    return float(np.sum(tan.pi_dot[:-1] ** 2) * obs.dt / (obs.T * model.Sigma ** 2))


def fisher_information(model: ModelSpec, alpha: float, dt: Optional[float] = None, seed: int = 0) -> float:
    """Closed form for the linear class, numeric average over FISHER_T on a FISHER_DT grid for chains"""
    if _is_chain(model):
        return fisher_numeric(model, alpha, settings.FISHER_T, settings.FISHER_DT if dt is None else dt, seed)
    return fisher_closed(reduce(model), alpha)


def theoretical_stderr(I: float, T: float) -> float:
    """
    Normal-approximation standard error (T·I)^(-1/2)

    Raises:
        ModelError: If I <= 0 or T <= 0
    """
    if I <= 0.0:
        raise ModelError(f"Fisher information must be positive, got {I}")
    if T <= 0.0:
        raise ModelError(f"T must be positive, got {T}")
    return 1.0 / math.sqrt(T * I)


def check_linear_identifiability(reduced: ReducedLinearModel, grid: Sequence[float], epsilon: float) -> bool:
    """
    Grid check of the identifiability condition of the linear class

    True iff |β̄'| + |κ'| > 0 at every grid point and
    |β̄(θ) - β̄(θ')| + |κ(θ) - κ(θ')| > 0 for every grid pair with |θ - θ'| > ε.
    """
    if epsilon <= 0:
        raise ModelError(f"epsilon must be positive, got {epsilon}")
    thetas = np.asarray(grid, dtype=float)
    coefficients = [reduced.at(float(t)) for t in thetas]
    beta = np.array([c.betabar for c in coefficients])
    kappa = np.array([c.kappa for c in coefficients])
    slope = np.array([abs(c.d_betabar) + abs(c.d_kappa) for c in coefficients])
    if not np.all(slope > 0.0):
        return False

    separation = np.abs(beta[:, None] - beta[None, :]) + np.abs(kappa[:, None] - kappa[None, :])
    far = np.abs(thetas[:, None] - thetas[None, :]) > epsilon
    if not far.any():
        return True
    return bool(np.min(separation[far]) > 0.0)
