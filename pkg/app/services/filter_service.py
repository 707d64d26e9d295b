"""
Filter Service

Finite-dimensional filters of the reduced models on a grid of step Δ:
- Kalman filter of the sampled homogenized linear model and its θ-tangent
- Wonham filter of the two-state chain observed in white noise

The sampled linear model is the one the simulators produce,

    U_{k+1} = (1 - β̄Δ) U_k + γ √Δ z_k,   ΔY_k = ā U_k Δ + Σ √Δ w_k,

so both filters are exact for their grid and reduce to the Kalman-Bucy and
Wonham equations as Δ → 0. π_k is the one-step predictive drift
E[h̄(U_k) | ΔY_0..ΔY_{k-1}], which is what the left-point likelihood needs.
"""

from typing import NamedTuple, Optional
import logging
import math

import numpy as np
from scipy.signal import lfilter

from app.config import settings
from app.exceptions import GridMismatchError, InstabilityError, ModelError
from app.schemas.model import ReducedCoefficients, ReducedLinearModel
from app.schemas.paths import FilterPath, Path, TangentPath
from app.services.simulate_service import chain_flip_probability


logger = logging.getLogger(__name__)


class StationaryGain(NamedTuple):
    kappa: float
    zeta: float
    sigma_hat_inf: float


class SampledFilter(NamedTuple):
    """Stationary sampled filter π_{k+1} = decay·π_k + drift_gain·ΔY_k and its θ-derivatives"""
    variance: float
    decay: float
    drift_gain: float
    d_variance: float
    d_decay: float
    d_drift_gain: float


def stationary_gain(reduced: ReducedLinearModel, theta: float) -> StationaryGain:
    """
    Stationary regime of the Kalman-Bucy filter (the Δ → 0 limit)

        κ = sqrt(β̄² + γ²ā²/Σ²),  ζ = κ - β̄,  σ̂∞ = Σ²ζ/ā²

    Raises:
        ModelError: If ā(θ) = 0 (the observations carry no signal)
    """
    co = reduced.at(theta)
    if co.abar == 0.0:
        raise ModelError(f"observation gain abar vanishes at theta={theta}; the model is not identifiable there")
    return StationaryGain(kappa=co.kappa, zeta=co.zeta, sigma_hat_inf=co.stationary_variance)


def _riccati_coefficients(co: ReducedCoefficients, dt: float):
    # fixed points of the sampled Riccati map solve a2 P² + a1 P - c = 0
    phi = 1.0 - co.betabar * dt
    s2 = co.Sigma ** 2
    a2 = co.abar ** 2 * dt
    a1 = s2 * (1.0 - phi * phi) - co.gamma ** 2 * co.abar ** 2 * dt * dt
    c = co.gamma ** 2 * dt * s2
    return phi, a2, a1, c


def sampled_stationary_variance(co: ReducedCoefficients, dt: float) -> float:
    """
    Fixed point of the predictive Riccati map

        P' = (1 - β̄Δ)² P Σ² / (ā²ΔP + Σ²) + γ²Δ

    It tends to σ̂∞ as Δ → 0.

    Raises:
        ModelError: If the map has no nonnegative fixed point
    """
    if dt <= 0:
        raise ModelError(f"dt must be positive, got {dt}")
    _, a2, a1, c = _riccati_coefficients(co, dt)
    root = math.sqrt(a1 * a1 + 4.0 * a2 * c)
    if a1 + root > 0.0:
        return 2.0 * c / (a1 + root)
    if a2 > 0.0:
        return max(-a1 / a2, 0.0)
    raise ModelError(f"the sampled filter has no stationary variance at theta={co.theta}, dt={dt}")


def sampled_filter(co: ReducedCoefficients, dt: float) -> SampledFilter:
    """
    Stationary sampled Kalman filter on the drift π = āÛ

        D = ā²ΔP + Σ²,  decay = (1 - β̄Δ)Σ²/D,  drift_gain = (1 - β̄Δ)ā²P/D

    The θ-derivatives follow from implicit differentiation of the fixed point.
    """
    phi, a2, a1, c = _riccati_coefficients(co, dt)
    P = sampled_stationary_variance(co, dt)
    slope = 2.0 * a2 * P + a1
    if slope <= 0.0:
        raise ModelError(f"the sampled Riccati fixed point is degenerate at theta={co.theta}, dt={dt}")

    s2 = co.Sigma ** 2
    a, da = co.abar, co.d_abar
    d_phi = -co.d_betabar * dt
    d_a2 = 2.0 * a * da * dt
    d_a1 = -2.0 * s2 * phi * d_phi - 2.0 * dt * dt * (co.gamma * co.d_gamma * a * a + co.gamma ** 2 * a * da)
    d_c = 2.0 * co.gamma * co.d_gamma * dt * s2
    dP = -(d_a2 * P * P + d_a1 * P - d_c) / slope

    D = a * a * dt * P + s2
    dD = dt * (2.0 * a * da * P + a * a * dP)
    decay = phi * s2 / D
    d_decay = s2 * (d_phi * D - phi * dD) / D ** 2
    num = phi * a * a * P
    d_num = d_phi * a * a * P + 2.0 * phi * a * da * P + phi * a * a * dP
    return SampledFilter(
        variance=P,
        decay=decay,
        drift_gain=num / D,
        d_variance=dP,
        d_decay=d_decay,
        d_drift_gain=(d_num * D - num * dD) / D ** 2,
    )


def riccati_path(co: ReducedCoefficients, sigma0: float, n: int, dt: float) -> np.ndarray:
    """
    Predictive variances P_0..P_n of the sampled filter started at sigma0
    """
    stationary = sampled_stationary_variance(co, dt)
    if sigma0 == stationary:
        return np.full(n + 1, stationary)
    out = np.empty(n + 1)
    P = float(sigma0)
    out[0] = P
    phi = 1.0 - co.betabar * dt
    s2 = co.Sigma ** 2
    obs_gain = co.abar ** 2 * dt
    q = co.gamma ** 2 * dt
    for k in range(n):
        P = phi * phi * P * s2 / (obs_gain * P + s2) + q
        if not math.isfinite(P):
            raise InstabilityError("Riccati variance", k + 1)
        out[k + 1] = P
    return out


def _first_bad(values: np.ndarray) -> Optional[int]:
    bad = ~np.isfinite(values)
    return int(np.argmax(bad)) if bad.any() else None


def kalman_bucy(
    reduced: ReducedLinearModel,
    theta: float,
    obs: Path,
    sigma0: Optional[float] = None,
    u0: float = 0.0,
) -> FilterPath:
    """
    Kalman filter of the sampled reduced linear model on the Y channel of obs

        π_{k+1} = (1 - β̄Δ)Σ²/D_k · π_k + (1 - β̄Δ)ā²P_k/D_k · ΔY_k,   D_k = ā²ΔP_k + Σ²

    Args:
        reduced: Reduced linear model
        theta: Parameter the filter runs at
        obs: Observation path (Y channel)
        sigma0: Initial predictive variance; the stationary value when omitted
        u0: Initial conditional mean

    Returns:
        FilterPath with π_k[h̄] = ā Û_k, the predictive variances and innovation increments
    """
    co = reduced.at(theta)
    dY = obs.increments("Y")
    n, dt = dY.shape[0], obs.dt
    start = sampled_stationary_variance(co, dt) if sigma0 is None else float(sigma0)
    if start < 0:
        raise ModelError(f"initial variance must be nonnegative, got {start}")

    sigma_hat = riccati_path(co, start, n, dt)
    phi = 1.0 - co.betabar * dt
    s2 = co.Sigma ** 2
    pi0 = co.abar * u0

    if np.all(sigma_hat == sigma_hat[0]):
        stationary = sampled_filter(co, dt)
        driven = lfilter([stationary.drift_gain], [1.0, -stationary.decay], dY)
        pi_h = np.concatenate(([pi0], driven + pi0 * stationary.decay ** np.arange(1, n + 1)))
    else:
        D = co.abar ** 2 * dt * sigma_hat[:-1] + s2
        decay = phi * s2 / D
        drift_gain = phi * co.abar ** 2 * sigma_hat[:-1] / D
        pi_h = np.empty(n + 1)
        pi_h[0] = pi0
        for k in range(n):
            pi_h[k + 1] = decay[k] * pi_h[k] + drift_gain[k] * dY[k]

    bad = _first_bad(pi_h)
    if bad is not None:
        raise InstabilityError("Kalman mean", bad)

    nu = (dY - pi_h[:-1] * dt) / co.Sigma
    return FilterPath(
        kind="kalman",
        t0=obs.t0,
        dt=dt,
        theta=theta,
        pi_h=pi_h,
        sigma_hat=sigma_hat,
        nu_increments=nu,
    )


def tangent_filter(
    reduced: ReducedLinearModel,
    theta: float,
    obs: Path,
    filter: FilterPath,
) -> TangentPath:
    """
    θ-derivative of the stationary sampled filter

        π̇_{k+1} = decay·π̇_k + decay'·π_k + drift_gain'·ΔY_k,   π̇_0 = ā'Û_0

    Args:
        reduced: Reduced linear model
        theta: Parameter (must match the filter's)
        obs: Observation path the filter ran on
        filter: kalman_bucy output at theta on obs, started at the stationary variance

    Raises:
        GridMismatchError: If obs and filter do not share a grid or θ
    """
    if filter.dt != obs.dt or filter.n_steps != obs.n_steps or filter.t0 != obs.t0:
        raise GridMismatchError(
            f"filter grid (t0={filter.t0}, dt={filter.dt}, n={filter.n_steps}) does not match "
            f"observation grid (t0={obs.t0}, dt={obs.dt}, n={obs.n_steps})"
        )
    if filter.theta != theta:
        raise GridMismatchError(f"filter was computed at theta={filter.theta}, not {theta}")

    co = reduced.at(theta)
    stationary = sampled_filter(co, obs.dt)
    pi_dot0 = co.d_abar * filter.pi_h[0] / co.abar if co.abar != 0.0 else 0.0
    forcing = stationary.d_decay * filter.pi_h[:-1] + stationary.d_drift_gain * obs.increments("Y")
    driven = lfilter([1.0], [1.0, -stationary.decay], forcing)
    pi_dot = np.concatenate(([pi_dot0], driven + pi_dot0 * stationary.decay ** np.arange(1, forcing.shape[0] + 1)))

    bad = _first_bad(pi_dot)
    if bad is not None:
        raise InstabilityError("tangent filter", bad)
    return TangentPath(t0=obs.t0, dt=obs.dt, theta=theta, pi_dot=pi_dot)


def _logistic(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def wonham_filter(theta: float, Sigma: float, obs: Path, p0: float = 0.5) -> FilterPath:
    """
    Wonham filter of the symmetric two-state chain with h̄(u) = u

    Each step is the exact discrete forward step on the grid: a Bayes update
    of the log-odds by (ΔY - Δ/2)/Σ², then the chain's flip probability
    q = (1 - e^{-2θΔ})/2 over Δ. As Δ → 0 this solves

        dp = θ(1 - 2p) dt + p(1 - p) Σ⁻² (dY - p dt)

    p stays in [ε, 1 - ε].

    Args:
        theta: Transition intensity (>= 0)
        Sigma: Observation noise scale (> 0)
        obs: Observation path (Y channel)
        p0: Initial probability of state 1

    Returns:
        FilterPath with π_k[h̄] = P(U_k = 1 | ΔY_0..ΔY_{k-1})
    """
    if theta < 0:
        raise ModelError(f"transition intensity must be nonnegative, got {theta}")
    if Sigma <= 0:
        raise ModelError(f"Sigma must be positive, got {Sigma}")

    eps = settings.WONHAM_EPS
    lo, hi = eps, 1.0 - eps
    dY = obs.increments("Y").tolist()
    dt = obs.dt
    inv_s2 = 1.0 / (Sigma * Sigma)
    flip = chain_flip_probability(theta, dt)
    keep = 1.0 - 2.0 * flip

    p = min(max(float(p0), lo), hi)
    probs = [p]
    for k, dy in enumerate(dY):
        log_odds = math.log(p / (1.0 - p)) + (dy - 0.5 * dt) * inv_s2
        if log_odds != log_odds:
            raise InstabilityError("Wonham probability", k + 1)
        p = flip + keep * _logistic(log_odds)
        p = lo if p < lo else (hi if p > hi else p)
        probs.append(p)

    pi_h = np.array(probs)
    nu = (np.asarray(dY) - pi_h[:-1] * dt) / Sigma
    return FilterPath(kind="wonham", t0=obs.t0, dt=dt, theta=theta, pi_h=pi_h, nu_increments=nu)
