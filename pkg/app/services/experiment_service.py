"""
Experiment Service

Monte Carlo harness for the estimation tables and histograms, and the
filter convergence study comparing the particle filter of the full system
with the reduced filter as δ shrinks.

Replicates run in worker processes through the event loop's executor;
summaries are always computed in replicate-index order so results are
identical for any worker count.
"""

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union
import asyncio
import logging
import math

import numpy as np
from scipy.stats import norm

from app.config import settings
from app.exceptions import ModelError, MultiscaleError, StudyAbortedError
from app.schemas.experiments import ConvergenceRow, ConvergenceTable, HistogramData, McConfig, McResult
from app.schemas.model import ExampleTag, ModelSpec
from app.services.filter_service import kalman_bucy
from app.services.inference_service import fisher_closed, fisher_numeric, mle, theoretical_stderr
from app.services.model_service import example_model, reduce
from app.services.particle_service import marginal_particle_filter, particle_filter
from app.services.simulate_service import derive_seed, simulate_multiscale


logger = logging.getLogger(__name__)

SeedFn = Callable[[int, int], int]
Outcome = Tuple[int, Optional[float], Optional[str]]


def study_model(config: McConfig) -> ModelSpec:
    return example_model(
        config.example_tag,
        Sigma=config.Sigma,
        sigma=config.sigma,
        delta=config.delta,
        theta_bounds=config.theta_bounds,
    )


def run_replicate(config: McConfig, index: int, seed: int) -> Outcome:
    """
    Simulate one full-system path at the true parameter and estimate θ

    Returns:
        (index, estimate or None, error message or None)
    """
    try:
        model = study_model(config)
        path = simulate_multiscale(model, config.true_alpha, config.T, config.dt, seed)
        result = mle(model, path, compute_fisher=False)
        return index, result.theta_hat, None
    except MultiscaleError as e:
        return index, None, str(e)


async def _gather_replicates(config: McConfig, seeds: List[int], jobs: int) -> List[Outcome]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            loop.run_in_executor(pool, run_replicate, config, index, seed)
            for index, seed in enumerate(seeds)
        ]
        return await asyncio.gather(*futures)


def _collect(config: McConfig, jobs: int, seed_fn: SeedFn) -> List[Outcome]:
    seeds = [seed_fn(config.root_seed, i) for i in range(config.n_replicates)]
    if jobs > 1:
        outcomes = asyncio.run(_gather_replicates(config, seeds, jobs))
    else:
        outcomes = []
        for index, seed in enumerate(seeds):
            outcomes.append(run_replicate(config, index, seed))
            if (index + 1) % 50 == 0:
                logger.info(f"[MC Study] {index + 1}/{len(seeds)} replicates done")
    return sorted(outcomes, key=lambda outcome: outcome[0])


def study_stderr(config: McConfig) -> Optional[float]:
    """Theoretical standard error of the study row: closed form, or numeric on the FISHER_DT grid for chains"""
    model = study_model(config)
    if model.slow_kind == "chain":
        seed = derive_seed(config.root_seed, config.n_replicates)
        fisher = fisher_numeric(model, config.true_alpha, config.fisher_T, settings.FISHER_DT, seed)
    else:
        fisher = fisher_closed(reduce(model), config.true_alpha)
    return theoretical_stderr(fisher, config.T) if fisher > 0.0 else None


def run_mc_study(
    config: McConfig,
    jobs: Optional[int] = None,
    seed_fn: SeedFn = derive_seed,
    n_bins: Optional[int] = None,
) -> McResult:
    """
    Monte Carlo study of the reduced-likelihood MLE

    Args:
        config: Study row (example, true α, horizon, scales, seeds)
        jobs: Worker processes; DEFAULT_JOBS when omitted
        seed_fn: Split function mapping (root_seed, index) to a replicate seed
        n_bins: Histogram bins; HISTOGRAM_BINS when omitted

    Returns:
        McResult with per-replicate estimates and summaries

    Raises:
        StudyAbortedError: If more than MAX_FAILURE_FRACTION of replicates fail
    """
    workers = settings.DEFAULT_JOBS if jobs is None else int(jobs)
    logger.info(
        f"[MC Study] {config.example_tag.value} alpha={config.true_alpha}: "
        f"{config.n_replicates} replicates, jobs={workers}"
    )
    outcomes = _collect(config, workers, seed_fn)

    failures = [(index, message) for index, value, message in outcomes if value is None]
    for index, message in failures:
        logger.warning(f"[MC Study] replicate {index} failed: {message}")
    if len(failures) > settings.MAX_FAILURE_FRACTION * config.n_replicates:
        raise StudyAbortedError(
            f"{len(failures)} of {config.n_replicates} replicates failed "
            f"(limit {settings.MAX_FAILURE_FRACTION:.0%})"
        )

    estimates = np.array([value for _, value, _ in outcomes if value is not None])
    if estimates.size < 2:
        raise StudyAbortedError("fewer than two replicates succeeded")

    stderr = study_stderr(config)
    histogram = histogram_with_normal_overlay(
        estimates,
        config.true_alpha,
        stderr if stderr else float(np.std(estimates, ddof=1)) or 1.0,
        n_bins or settings.HISTOGRAM_BINS,
    )
    result = McResult(
        alpha=config.true_alpha,
        estimates=estimates,
        mean_estimate=float(np.mean(estimates)),
        empirical_stderr=float(np.std(estimates, ddof=1)),
        theoretical_stderr=stderr,
        n_ok=int(estimates.size),
        n_fail=len(failures),
        histogram=histogram,
    )
    logger.info(
        f"[MC Study] alpha={result.alpha}: mean={result.mean_estimate:.4f}, "
        f"empirical={result.empirical_stderr:.4f}, theoretical={result.theoretical_stderr}"
    )
    return result


def histogram_with_normal_overlay(
    estimates: Sequence[float],
    alpha: float,
    stderr: float,
    n_bins: int,
) -> HistogramData:
    """
    Density histogram of the estimates over [min, max] plus OVERLAY_POINTS
    samples of the N(alpha, stderr²) density on alpha ± 4·stderr
    """
    values = np.asarray(estimates, dtype=float)
    if values.size == 0:
        raise ModelError("histogram needs at least one estimate")
    if n_bins < 2:
        raise ModelError(f"histogram needs at least two bins, got {n_bins}")
    if stderr <= 0:
        raise ModelError(f"overlay standard error must be positive, got {stderr}")

    density, edges = np.histogram(values, bins=n_bins, density=True)
    x = np.linspace(alpha - 4.0 * stderr, alpha + 4.0 * stderr, settings.OVERLAY_POINTS)
    return HistogramData(bin_edges=edges, density=density, overlay_x=x, overlay_pdf=norm.pdf(x, loc=alpha, scale=stderr))


ParticleKind = Literal["marginal", "bootstrap"]


def _convergence_replicate(
    model: ModelSpec, alpha: float, T: float, dt: float, n_particles: int, seed: int, particles: ParticleKind
) -> float:
    path = simulate_multiscale(model, alpha, T, dt, seed)
    run = marginal_particle_filter if particles == "marginal" else particle_filter
    particle, _ = run(model, alpha, path, N=n_particles, seed=derive_seed(seed, 1))
    reduced = kalman_bucy(reduce(model), alpha, path)
    return float(np.mean((particle.pi_h - reduced.pi_h) ** 2))


def filter_convergence_study(
    example: Union[ExampleTag, str, ModelSpec],
    alpha: float,
    deltas: Sequence[float],
    n_particles: int,
    n_replicates: int,
    T: float = 25.0,
    dt: float = 0.02,
    Sigma: float = 0.1,
    sigma: float = 0.1,
    root_seed: int = 0,
    particles: ParticleKind = "marginal",
) -> ConvergenceTable:
    """
    Time-averaged squared gap between the particle filter of the full
    system and the reduced Kalman filter, for each δ

    Replicate i uses the same seed for every δ, so rows differ only through δ.

    Args:
        example: Example tag or a ModelSpec of the linear class
        deltas: Non-increasing scale parameters (at least two)
        particles: "marginal" for the Rao-Blackwellized filter (only X is
            sampled), "bootstrap" for the plain particle filter

    Returns:
        ConvergenceTable of (δ, mse, mc_stderr) rows
    """
    if len(deltas) < 2:
        raise ModelError("convergence study needs at least two delta values")
    if any(later > earlier for earlier, later in zip(deltas, deltas[1:])):
        raise ModelError(f"delta values must be non-increasing, got {list(deltas)}")
    if n_replicates < 2:
        raise ModelError(f"convergence study needs at least two replicates, got {n_replicates}")

    if isinstance(example, ModelSpec):
        base = example
    else:
        base = example_model(ExampleTag(example), Sigma=Sigma, sigma=sigma, delta=deltas[0])

    rows = []
    for delta in deltas:
        model = base.with_delta(delta)
        errors = np.array([
            _convergence_replicate(model, alpha, T, dt, n_particles, derive_seed(root_seed, i), particles)
            for i in range(n_replicates)
        ])
        row = ConvergenceRow(
            delta=delta,
            mse=float(np.mean(errors)),
            mc_stderr=float(np.std(errors, ddof=1) / math.sqrt(n_replicates)),
        )
        logger.info(f"[Convergence] delta={delta}: mse={row.mse:.3e} ± {row.mc_stderr:.1e}")
        rows.append(row)
    return ConvergenceTable(rows=rows)
