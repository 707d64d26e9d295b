"""
Simulation Service

Sample paths of the full slow-fast system, of the reduced linear system and
of the two-state chain. Every generator takes one integer seed; noise sources
(initial state, observation noise W, slow noise V, fast noise B) come from
independent child streams of that seed, so two generators called with the
same seed share their W and V draws.
"""

from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.signal import lfilter

from app.exceptions import InstabilityError, ModelError
from app.schemas.model import ModelSpec, ReducedLinearModel
from app.schemas.paths import Path
from app.services.model_service import euler_fast_step, reduce


logger = logging.getLogger(__name__)

_STREAMS = ("init", "W", "V", "B")


def derive_seed(root_seed: int, index: int) -> int:
    """
    Seed of replicate `index` under `root_seed`

    The pair (root_seed, index) is hashed by numpy's SeedSequence into a
    64-bit integer, so replicates are independent and each can be rerun alone.
    """
    state = np.random.SeedSequence([int(root_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def noise_streams(seed: int) -> dict:
    children = np.random.SeedSequence(int(seed)).spawn(len(_STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, children)}


def grid_steps(T: float, dt: float) -> int:
    """Number of steps of size dt covering [0, T]; T/dt must be integral"""
    if dt <= 0:
        raise ModelError(f"dt must be positive, got {dt}")
    if T < dt:
        raise ModelError(f"T must be at least dt, got T={T}, dt={dt}")
    steps = T / dt
    n = int(round(steps))
    if abs(steps - n) > 1e-9 * max(1.0, steps):
        raise ModelError(f"T/dt must be integral, got {steps}")
    return n


def ou_transition(x, mean, rate: float, noise: float, dt: float, z):
    """
    Exact transition of dX = rate (mean - X) dt + noise dB over dt

    `noise` is the diffusion coefficient of X itself (σ/√δ for the fast
    component), so the stationary variance is noise²/(2 rate).
    """
    decay = math.exp(-rate * dt)
    spread = noise * np.sqrt((1.0 - decay ** 2) / (2.0 * rate))
    return mean + (x - mean) * decay + spread * z


def fast_substeps(model: ModelSpec, dt: float) -> int:
    """1 for exact OU stepping, ceil(10·dt/δ) Euler substeps otherwise"""
    if model.fast_ou_mean is not None:
        return 1
    return max(1, math.ceil(10.0 * dt / model.delta))


def advance_fast(model: ModelSpec, theta: float, x, u, dt: float, normals: np.ndarray):
    """
    Move the fast component across one observation step with u frozen

    Args:
        normals: Standard normals of shape (fast_substeps, *x.shape)
    """
    if model.fast_ou_mean is not None:
        noise = model.sigma(x, u, theta) / math.sqrt(model.delta)
        return ou_transition(x, model.fast_ou_mean(u, theta), 1.0 / model.delta, noise, dt, normals[0])
    return euler_fast_step(model, theta, x, u, dt, normals)


def chain_flip_probability(theta: float, dt: float) -> float:
    """Probability that the symmetric two-state chain changes state over dt"""
    return 0.5 * (1.0 - math.exp(-2.0 * theta * dt))


def propagate(model: ModelSpec, theta: float, x: np.ndarray, u: np.ndarray, dt: float, rng: np.random.Generator):
    """
    Vectorized one-step move of (x, u) clouds under the full dynamics

    Slow diffusion: Euler with left-point coefficients. Chain: exact flip
    probability over dt. Fast: advance_fast with u frozen at its left value.
    """
    n_sub = fast_substeps(model, dt)
    x_new = advance_fast(model, theta, x, u, dt, rng.standard_normal((n_sub,) + x.shape))
    if model.slow_kind == "chain":
        flips = rng.random(u.shape) < chain_flip_probability(theta, dt)
        u_new = np.where(flips, 1.0 - u, u)
    else:
        z = rng.standard_normal(u.shape)
        u_new = u + model.g(x, u, theta) * dt + model.tau(x, u, theta) * math.sqrt(dt) * z
    return x_new, u_new


def ctmc_jump_times(theta: float, T: float, rng: np.random.Generator, u0: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Jump times and post-jump states of the symmetric two-state chain on [0, T]

    Holding times are exponential with rate θ in either state.

    Returns:
        (times, states) where states[0] = u0 at times[0] = 0
    """
    if theta < 0:
        raise ModelError(f"transition intensity must be nonnegative, got {theta}")
    times = [0.0]
    states = [int(u0)]
    if theta == 0.0:
        return np.array(times), np.array(states, dtype=float)
    t = rng.exponential(1.0 / theta)
    while t <= T:
        times.append(t)
        states.append(1 - states[-1])
        t += rng.exponential(1.0 / theta)
    return np.array(times), np.array(states, dtype=float)


def _chain_on_grid(times: np.ndarray, states: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # last value at or before each grid time
    idx = np.searchsorted(times, grid, side="right") - 1
    return states[idx]


def simulate_ctmc(theta: float, T: float, dt: float, seed: int, u0: Optional[int] = None) -> Path:
    """
    Symmetric two-state chain with intensity θ sampled on the dt grid

    Args:
        theta: Transition intensity (>= 0)
        u0: Initial state; uniform on {0, 1} when omitted

    Returns:
        Path with a single U channel
    """
    n = grid_steps(T, dt)
    streams = noise_streams(seed)
    start = int(streams["init"].integers(0, 2)) if u0 is None else int(u0)
    times, states = ctmc_jump_times(theta, n * dt, streams["V"], start)
    grid = dt * np.arange(n + 1)
    return Path(dt=dt, n_steps=n, channels={"U": _chain_on_grid(times, states, grid)}, seed=seed, delta=0.0)


def _initial_slow(model: ModelSpec, theta: float, rng: np.random.Generator) -> float:
    if model.slow_kind == "chain":
        return float(rng.integers(0, 2))
    if model.linear is not None:
        spread = math.sqrt(reduce(model).at(theta).stationary_variance)
        return float(spread * rng.standard_normal())
    return 0.0


def _initial_fast(model: ModelSpec, theta: float, u0: float, rng: np.random.Generator) -> float:
    if model.fast_ou_mean is None:
        return 0.0
    mean = float(model.fast_ou_mean(u0, theta))
    noise = float(model.sigma(mean, u0, theta))
    return float(mean + noise / math.sqrt(2.0) * rng.standard_normal())


def simulate_multiscale(
    model: ModelSpec,
    theta: float,
    T: float,
    dt: float,
    seed: int,
    x0: Optional[float] = None,
    u0: Optional[float] = None,
) -> Path:
    """
    Simulate (Y, U, X) of the full system on the observation grid

    Y and a diffusive U use Euler-Maruyama with left-point coefficients; X
    uses the exact OU transition when the fast drift is OU and Euler
    substeps otherwise; a chain U uses exact exponential holding times.

    Args:
        model: Full model
        theta: True parameter
        T: Horizon (T/dt integral)
        dt: Observation step
        seed: Root seed of the path
        x0, u0: Optional initial state; when omitted U0 ~ N(0, Σ²ζ/ā²) for the
            linear class (uniform on {0, 1} for a chain) and X0 from the fast
            invariant law given U0

    Returns:
        Path with channels Y, U, X

    Raises:
        InstabilityError: If the state becomes non-finite
    """
    if not model.contains(theta):
        raise ModelError(f"theta={theta} outside bounds {model.theta_bounds}")
    n = grid_steps(T, dt)
    streams = noise_streams(seed)
    init = streams["init"]

    u_start = _initial_slow(model, theta, init) if u0 is None else float(u0)
    x_start = _initial_fast(model, theta, u_start, init) if x0 is None else float(x0)

    sq = math.sqrt(dt)
    dW = model.Sigma * sq * streams["W"].standard_normal(n)
    n_sub = fast_substeps(model, dt)
    zB = streams["B"].standard_normal((n, n_sub))

    if model.slow_kind == "chain":
        times, states = ctmc_jump_times(theta, n * dt, streams["V"], int(u_start))
        U = _chain_on_grid(times, states, dt * np.arange(n + 1))
    else:
        zV = streams["V"].standard_normal(n)
        U = np.empty(n + 1)
        U[0] = u_start

    X = np.empty(n + 1)
    Y = np.empty(n + 1)
    X[0] = x_start
    Y[0] = 0.0

    for k in range(n):
        x, u = X[k], U[k]
        Y[k + 1] = Y[k] + model.h(x, u, theta) * dt + dW[k]
        if model.slow_kind != "chain":
            U[k + 1] = u + model.g(x, u, theta) * dt + model.tau(x, u, theta) * sq * zV[k]
        X[k + 1] = advance_fast(model, theta, x, u, dt, zB[k])
        if not (math.isfinite(Y[k + 1]) and math.isfinite(U[k + 1]) and math.isfinite(X[k + 1])):
            raise InstabilityError("multiscale state", k + 1)

    logger.debug(f"[Simulate] multiscale path: theta={theta}, T={T}, dt={dt}, delta={model.delta}, seed={seed}")
    return Path(dt=dt, n_steps=n, channels={"Y": Y, "U": U, "X": X}, seed=seed, delta=model.delta)


def simulate_reduced(
    reduced: ReducedLinearModel,
    theta: float,
    T: float,
    dt: float,
    seed: int,
    u0: Optional[float] = None,
) -> Path:
    """
    Simulate (Ȳ, Ū) of the reduced linear system

    Ū advances by its exact OU transition, Ȳ by Itô-Euler. U0 ~ N(0, Σ²ζ/ā²)
    unless given. The initial and V draws match those simulate_multiscale
    takes from the same seed.
    """
    n = grid_steps(T, dt)
    streams = noise_streams(seed)
    co = reduced.at(theta)
    if u0 is None:
        u_start = math.sqrt(co.stationary_variance) * streams["init"].standard_normal()
    else:
        u_start = float(u0)

    dW = reduced.Sigma * math.sqrt(dt) * streams["W"].standard_normal(n)
    zV = streams["V"].standard_normal(n)

    if co.betabar > 0.0:
        decay = math.exp(-co.betabar * dt)
        spread = abs(co.gamma) * math.sqrt((1.0 - decay ** 2) / (2.0 * co.betabar))
    else:
        decay = 1.0
        spread = abs(co.gamma) * math.sqrt(dt)
    # U_{k+1} = decay U_k + spread z_k as an IIR filter seeded with U_0
    drive = np.concatenate(([u_start], spread * zV))
    U = lfilter([1.0], [1.0, -decay], drive)
    Y = np.concatenate(([0.0], np.cumsum(co.abar * U[:-1] * dt + dW)))

    bad = ~(np.isfinite(U) & np.isfinite(Y))
    if bad.any():
        raise InstabilityError("reduced state", int(np.argmax(bad)))
    return Path(dt=dt, n_steps=n, channels={"Y": Y, "U": U}, seed=seed, delta=0.0)


def simulate_reduced_chain(theta: float, Sigma: float, T: float, dt: float, seed: int) -> Path:
    """
    Reduced Example 3 system: dȲ = U dt + Σ dW with U the two-state chain
    """
    chain = simulate_ctmc(theta, T, dt, seed)
    n = chain.n_steps
    U = chain.channel("U")
    dW = Sigma * math.sqrt(dt) * noise_streams(seed)["W"].standard_normal(n)
    Y = np.concatenate(([0.0], np.cumsum(U[:-1] * dt + dW)))
    return Path(dt=dt, n_steps=n, channels={"Y": Y, "U": U}, seed=seed, delta=0.0)
