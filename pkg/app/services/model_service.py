"""
Model Service

Invariant measures of the fast component, averaged coefficients and the
reduced (homogenized) linear model, plus the registry of the three example
systems.
"""

from functools import lru_cache
from typing import Callable, Optional, Tuple
import logging
import math

import numpy as np
from numpy.polynomial.hermite import hermgauss

from app.config import settings
from app.exceptions import ModelError
from app.schemas.model import (
    EmpiricalMeasure,
    ExampleTag,
    GaussianMeasure,
    LinearStructure,
    Measure,
    ModelSpec,
    ReducedLinearModel,
)


logger = logging.getLogger(__name__)


# Admissible parameter ranges used when a run does not name its own bounds
DEFAULT_BOUNDS = {
    ExampleTag.EXAMPLE1: (-1.0, 2.5),
    ExampleTag.EXAMPLE2: (-1.0, 3.0),
    ExampleTag.EXAMPLE3: (0.05, 4.0),
}


def invariant_measure_ou(theta: float, sigma: float) -> GaussianMeasure:
    """
    Invariant law of dX = (θ - X) dt + σ dB, i.e. N(θ, σ²/2)

    Args:
        theta: Mean-reversion level
        sigma: Noise scale (>= 0)

    Returns:
        GaussianMeasure with mean θ and variance σ²/2
    """
    if sigma < 0:
        raise ModelError(f"sigma must be nonnegative, got {sigma}")
    return GaussianMeasure(mean=theta, variance=sigma ** 2 / 2.0)


@lru_cache(maxsize=None)
def _hermite_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = hermgauss(n)
    return nodes, weights / math.sqrt(math.pi)


def _gauss_hermite(f: Callable, mu: GaussianMeasure, u: float, n: int) -> float:
    nodes, weights = _hermite_rule(n)
    x = mu.mean + math.sqrt(2.0 * mu.variance) * nodes
    values = np.broadcast_to(np.asarray(f(x, u), dtype=float), x.shape)
    return float(np.dot(weights, values))


def average_coefficient(f: Callable, mu: Measure) -> Callable[[float], float]:
    """
    Average f(x, u) against the fast invariant measure

    Gaussian measures use Gauss-Hermite quadrature with node doubling until
    two successive orders agree to QUADRATURE_RTOL or the node cap is reached.
    Empirical measures use the sample mean.

    Args:
        f: Integrand f(x, u); must accept an array of x values
        mu: Invariant measure of the fast component

    Returns:
        u ↦ ∫ f(x, u) mu(dx)

    Raises:
        ModelError: If the quadrature does not settle before the node cap
    """
    if isinstance(mu, EmpiricalMeasure):
        def averaged_empirical(u: float) -> float:
            values = np.broadcast_to(np.asarray(f(mu.samples, u), dtype=float), mu.samples.shape)
            return float(np.mean(values))
        return averaged_empirical

    def averaged(u: float) -> float:
        if mu.variance == 0.0:
            return float(np.asarray(f(np.array([mu.mean]), u), dtype=float).reshape(-1)[0])

        cap = settings.QUADRATURE_NODE_CAP
        n = settings.QUADRATURE_START_NODES
        previous = _gauss_hermite(f, mu, u, n)
        while n < cap:
            n = min(2 * n, cap)
            current = _gauss_hermite(f, mu, u, n)
            if not math.isfinite(current):
                break
            if abs(current - previous) <= settings.QUADRATURE_RTOL * max(abs(current), 1.0):
                return current
            previous = current
        raise ModelError(
            f"averaging quadrature did not converge within {cap} nodes at u={u}; "
            "the integrand is not admissible for this invariant measure"
        )

    return averaged


def euler_fast_step(model: ModelSpec, theta: float, x, u, dt: float, normals: np.ndarray):
    """
    Advance the fast component by len(normals) Euler substeps of size dt/len(normals)

    The slow state u is frozen over the step.
    """
    n_sub = normals.shape[0]
    h = dt / n_sub
    scale = math.sqrt(h / model.delta)
    for z in normals:
        x = x + model.b(x, u, theta) * (h / model.delta) + model.sigma(x, u, theta) * scale * z
    return x


def empirical_invariant_measure(
    model: ModelSpec,
    theta: float,
    u: float = 0.0,
    seed: int = 0,
) -> EmpiricalMeasure:
    """
    Long-run empirical measure of the fast component with δ = 1 and u frozen

    Runs EMPIRICAL_SAMPLES Euler steps of size EMPIRICAL_DT from x=0 and
    discards the first EMPIRICAL_BURN_IN fraction.
    """
    rng = np.random.default_rng(seed)
    n = settings.EMPIRICAL_SAMPLES
    dt = settings.EMPIRICAL_DT
    z = rng.standard_normal(n)
    samples = np.empty(n)
    x = 0.0
    sq = math.sqrt(dt)
    for k in range(n):
        x = x + model.b(x, u, theta) * dt + model.sigma(x, u, theta) * sq * z[k]
        if not math.isfinite(x):
            raise ModelError(f"fast component diverged at step {k} while sampling its invariant measure")
        samples[k] = x
    burn = int(settings.EMPIRICAL_BURN_IN * n)
    return EmpiricalMeasure(samples=samples[burn:])


def fast_invariant_measure(model: ModelSpec, theta: float, u: float = 0.0) -> Measure:
    """
    Invariant measure of the fast component at (θ, u)

    Order of preference: user-supplied measure, Gaussian law of an OU fast
    component, long-run empirical measure.
    """
    if model.invariant_measure is not None:
        return model.invariant_measure(theta)
    if model.fast_ou_mean is not None:
        mean = float(model.fast_ou_mean(u, theta))
        sigma = float(model.sigma(mean, u, theta))
        return GaussianMeasure(mean=mean, variance=sigma ** 2 / 2.0)
    return empirical_invariant_measure(model, theta, u)


def central_difference(fn: Callable[[float], float], step: Optional[float] = None) -> Callable[[float], float]:
    """Central finite-difference derivative with step FD_STEP·max(1, |θ|)"""
    base = settings.FD_STEP if step is None else step

    def derivative(theta: float) -> float:
        h = base * max(1.0, abs(theta))
        return (fn(theta + h) - fn(theta - h)) / (2.0 * h)

    return derivative


def reduce(model: ModelSpec) -> ReducedLinearModel:
    """
    Homogenize a model of the linear class

        ā(θ) = a(θ) ∫λ dμ_θ,   β̄(θ) = β(θ) ∫q dμ_θ,   γ(θ)

    Args:
        model: Model with a linear structure (Example 1, Example 2 or Custom)

    Returns:
        ReducedLinearModel with analytic or finite-difference derivatives

    Raises:
        ModelError: For Example 3 (its reduction is a Markov chain) or
            models without a linear structure
    """
    if model.example_tag == ExampleTag.EXAMPLE3 or model.slow_kind == "chain":
        raise ModelError(
            "the reduced model of a chain-driven system is a two-state Markov chain; "
            "use the Wonham filter instead of reduce()"
        )
    lin = model.linear
    if lin is None:
        raise ModelError("reduce() needs a model with linear structure (a, lambda, beta, q, gamma)")

    @lru_cache(maxsize=256)
    def averages(theta: float) -> Tuple[float, float]:
        mu = fast_invariant_measure(model, theta)
        lam_bar = average_coefficient(lambda x, u: lin.lam(x), mu)(0.0)
        q_bar = average_coefficient(lambda x, u: lin.q(x), mu)(0.0)
        return lam_bar, q_bar

    def abar(theta: float) -> float:
        return float(lin.a(theta)) * averages(float(theta))[0]

    def betabar(theta: float) -> float:
        return float(lin.beta(theta)) * averages(float(theta))[1]

    def gamma(theta: float) -> float:
        return float(lin.gamma(theta))

    return ReducedLinearModel(
        abar=abar,
        betabar=betabar,
        gamma=gamma,
        Sigma=model.Sigma,
        d_abar=lin.d_abar or central_difference(abar),
        d_betabar=lin.d_betabar or central_difference(betabar),
        d_gamma=lin.d_gamma or central_difference(gamma),
    )


def _one(x):
    return np.ones_like(np.asarray(x, dtype=float))


def example_model(
    tag: ExampleTag,
    Sigma: float = 0.1,
    sigma: float = 0.1,
    delta: float = 0.01,
    theta_bounds: Optional[Tuple[float, float]] = None,
) -> ModelSpec:
    """
    Build one of the registered example systems

    Example 1: dY = e^X U dt + Σ dW,  dU = -U dt + dV,      dX = (θ-X)/δ dt + σ/√δ dB
    Example 2: dY = U dt + Σ dW,      dU = -e^X U dt + dV,  dX = (θ-X)/δ dt + σ/√δ dB
    Example 3: dY = X dt + Σ dW,      U two-state chain (intensity θ),  dX = (U-X)/δ dt + σ/√δ dB
    """
    tag = ExampleTag(tag)
    if tag not in DEFAULT_BOUNDS:
        raise ModelError(f"no registered example for tag {tag.value}")
    bounds = theta_bounds or DEFAULT_BOUNDS[tag]
    noise = float(sigma)
    shift = noise ** 2 / 4.0

    def fast_sigma(x, u, theta):
        return noise * _one(x)

    if tag == ExampleTag.EXAMPLE1:
        return ModelSpec(
            h=lambda x, u, theta: np.exp(x) * u,
            g=lambda x, u, theta: -u * _one(x),
            tau=lambda x, u, theta: _one(x),
            b=lambda x, u, theta: theta - x,
            sigma=fast_sigma,
            Sigma=Sigma,
            delta=delta,
            theta_bounds=bounds,
            example_tag=tag,
            fast_ou_mean=lambda u, theta: theta * _one(u),
            linear=LinearStructure(
                a=lambda theta: 1.0,
                lam=np.exp,
                beta=lambda theta: 1.0,
                q=_one,
                gamma=lambda theta: 1.0,
                d_abar=lambda theta: math.exp(theta + shift),
                d_betabar=lambda theta: 0.0,
                d_gamma=lambda theta: 0.0,
            ),
        )

    if tag == ExampleTag.EXAMPLE2:
        return ModelSpec(
            h=lambda x, u, theta: u * _one(x),
            g=lambda x, u, theta: -np.exp(x) * u,
            tau=lambda x, u, theta: _one(x),
            b=lambda x, u, theta: theta - x,
            sigma=fast_sigma,
            Sigma=Sigma,
            delta=delta,
            theta_bounds=bounds,
            example_tag=tag,
            fast_ou_mean=lambda u, theta: theta * _one(u),
            linear=LinearStructure(
                a=lambda theta: 1.0,
                lam=_one,
                beta=lambda theta: 1.0,
                q=np.exp,
                gamma=lambda theta: 1.0,
                d_abar=lambda theta: 0.0,
                d_betabar=lambda theta: math.exp(theta + shift),
                d_gamma=lambda theta: 0.0,
            ),
        )

    return ModelSpec(
        h=lambda x, u, theta: x,
        b=lambda x, u, theta: u - x,
        sigma=fast_sigma,
        Sigma=Sigma,
        delta=delta,
        theta_bounds=bounds,
        example_tag=ExampleTag.EXAMPLE3,
        slow_kind="chain",
        fast_ou_mean=lambda u, theta: u,
    )


def embed_reduced(
    reduced: ReducedLinearModel,
    theta_bounds: Tuple[float, float],
) -> ModelSpec:
    """
    Express a reduced linear model as a ModelSpec without a fast component

    The fast state is pinned at 0 (zero noise, δ = 1), so particle filters
    and simulators built for the full system run on the linear-Gaussian model.
    """
    def pinned(x, u, theta):
        return 0.0 * np.asarray(x, dtype=float)

    return ModelSpec(
        h=lambda x, u, theta: reduced.abar(theta) * u,
        g=lambda x, u, theta: -reduced.betabar(theta) * u,
        tau=lambda x, u, theta: reduced.gamma(theta) * _one(u),
        b=lambda x, u, theta: -x,
        sigma=pinned,
        Sigma=reduced.Sigma,
        delta=1.0,
        theta_bounds=theta_bounds,
        example_tag=ExampleTag.CUSTOM,
        fast_ou_mean=lambda u, theta: 0.0 * np.asarray(u, dtype=float),
        linear=LinearStructure(
            a=reduced.abar,
            lam=_one,
            beta=reduced.betabar,
            q=_one,
            gamma=reduced.gamma,
            d_abar=reduced.d_abar,
            d_betabar=reduced.d_betabar,
            d_gamma=reduced.d_gamma,
        ),
    )
