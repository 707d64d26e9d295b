import math

import numpy as np
import pytest

from app.exceptions import DegeneracyError, ModelError
from app.schemas.model import ExampleTag, ModelSpec
from app.schemas.paths import ParticleEnsemble, Path
from app.services.filter_service import kalman_bucy
from app.services.inference_service import log_likelihood_from_drift
from app.services.model_service import embed_reduced, example_model, reduce
from app.services.particle_service import (
    increment_log_weights,
    initial_ensemble,
    marginal_particle_filter,
    particle_filter,
    systematic_resample,
)
from app.services.simulate_service import simulate_multiscale, simulate_reduced


def test_systematic_resample_counts_are_floor_or_ceil():
    rng = np.random.default_rng(0)
    weights = np.array([0.1, 0.25, 0.05, 0.6])
    n = weights.size * 25
    idx = systematic_resample(np.repeat(weights / 25.0, 25), rng)
    assert idx.shape == (n,)
    block_counts = np.bincount(idx // 25, minlength=4)
    assert np.all(np.abs(block_counts - n * weights) <= 1.0)


def test_systematic_resample_point_mass():
    idx = systematic_resample(np.array([0.0, 1.0, 0.0]), np.random.default_rng(1))
    assert np.all(idx == 1)


def test_ensemble_weights():
    ensemble = ParticleEnsemble(x=np.zeros(4), u=np.zeros(4), log_weights=np.log([1.0, 1.0, 2.0, 4.0]))
    assert ensemble.weights().sum() == pytest.approx(1.0)
    assert ensemble.log_mean_weight() == pytest.approx(math.log(2.0))
    uniform = ParticleEnsemble(x=np.zeros(8), u=np.zeros(8), log_weights=np.full(8, -3.0))
    assert uniform.effective_sample_size() == pytest.approx(8.0)


def test_increment_log_weights_is_gaussian_likelihood_ratio():
    model = example_model(ExampleTag.EXAMPLE2, Sigma=0.5)
    u = np.array([0.0, 1.0])
    logw = increment_log_weights(model, 0.0, np.zeros(2), u, dy=0.1, dt=0.02)
    assert logw[0] == 0.0
    assert logw[1] == pytest.approx((0.1 - 0.5 * 0.02) / 0.25)


def test_particle_filter_is_reproducible():
    model = example_model(ExampleTag.EXAMPLE1)
    obs = simulate_multiscale(model, 0.0, 1.0, 0.02, seed=4)
    first, evidence = particle_filter(model, 0.0, obs, N=200, seed=5)
    second, again = particle_filter(model, 0.0, obs, N=200, seed=5)
    assert np.array_equal(first.pi_h, second.pi_h)
    assert evidence == again
    assert math.isfinite(evidence)
    assert first.kind == "particle"
    assert np.all(first.ess >= 1.0 - 1e-9)
    assert np.all(first.ess <= 200.0 + 1e-9)


def test_particle_filter_reports_ensemble_effective_sample_size():
    model = example_model(ExampleTag.EXAMPLE1, Sigma=0.05)
    obs = simulate_multiscale(model, 0.0, 0.1, 0.02, seed=6)
    result, _ = particle_filter(model, 0.0, obs, N=300, seed=7)

    prior = initial_ensemble(model, 0.0, 300, np.random.default_rng(7), obs.dt)
    first = ParticleEnsemble(
        x=prior.x,
        u=prior.u,
        log_weights=increment_log_weights(model, 0.0, prior.x, prior.u, obs.increments("Y")[0], obs.dt),
    )
    assert result.ess[0] == 300.0
    assert result.ess[1] == pytest.approx(first.effective_sample_size(), rel=1e-12)
    assert result.ess[1] < 300.0


def test_particle_filter_on_chain_model():
    model = example_model(ExampleTag.EXAMPLE3)
    obs = simulate_multiscale(model, 1.0, 1.0, 0.02, seed=2)
    result, _ = particle_filter(model, 1.0, obs, N=100, seed=3)
    assert result.n_steps == obs.n_steps


def _linear_gaussian(Sigma=1.0):
    reduced = reduce(example_model(ExampleTag.EXAMPLE1, Sigma=Sigma))
    return reduced, embed_reduced(reduced, (-1.0, 2.5))


def test_particle_filter_matches_kalman_on_linear_gaussian_model():
    reduced, embedded = _linear_gaussian()
    n_particles, replicates = 2000, 20
    gaps = []
    for replicate in range(replicates):
        obs = simulate_reduced(reduced, 0.0, 2.0, 0.01, seed=100 + replicate)
        kalman = kalman_bucy(reduced, 0.0, obs)
        particle, _ = particle_filter(embedded, 0.0, obs, N=n_particles, seed=200 + replicate)
        gaps.append((particle.pi_h - kalman.pi_h)[::10])

    posterior_std = abs(reduced.at(0.0).abar) * np.sqrt(kalman.sigma_hat[::10])
    rms = np.sqrt(np.mean(np.array(gaps) ** 2, axis=0))
    assert np.all(rms <= 3.0 * posterior_std / math.sqrt(n_particles))


@pytest.mark.slow
def test_particle_variance_halves_when_particles_double():
    reduced, embedded = _linear_gaussian()
    obs = simulate_reduced(reduced, 0.0, 10.0, 0.01, seed=40)

    def spread(n_particles):
        runs = np.array([particle_filter(embedded, 0.0, obs, N=n_particles, seed=1000 + s)[0].pi_h[::10] for s in range(80)])
        return float(np.mean(np.var(runs, axis=0, ddof=1)))

    assert spread(500) / spread(250) == pytest.approx(0.5, rel=0.3)


def test_marginal_filter_is_exact_on_linear_gaussian_model():
    reduced, embedded = _linear_gaussian()
    obs = simulate_reduced(reduced, 0.0, 2.0, 0.01, seed=12)
    particle, log_evidence = marginal_particle_filter(embedded, 0.0, obs, N=50, seed=13)
    kalman = kalman_bucy(reduced, 0.0, obs)
    assert np.allclose(particle.pi_h, kalman.pi_h, rtol=1e-9, atol=1e-12)

    co = reduced.at(0.0)
    dY, dt = obs.increments("Y"), obs.dt
    innovation_var = co.abar ** 2 * dt ** 2 * kalman.sigma_hat[:-1] + co.Sigma ** 2 * dt
    resid = dY - kalman.pi_h[:-1] * dt
    expected = np.sum(
        -0.5 * np.log(innovation_var / (co.Sigma ** 2 * dt))
        - resid ** 2 / (2.0 * innovation_var)
        + dY ** 2 / (2.0 * co.Sigma ** 2 * dt)
    )
    assert log_evidence == pytest.approx(float(expected), rel=1e-9)
    assert np.allclose(particle.ess, 50.0)


def test_marginal_filter_stays_close_to_reduced_filter_for_small_delta():
    model = example_model(ExampleTag.EXAMPLE1)
    obs = simulate_multiscale(model, 0.0, 5.0, 0.02, seed=14)
    particle, log_evidence = marginal_particle_filter(model, 0.0, obs, N=200, seed=15)
    again, _ = marginal_particle_filter(model, 0.0, obs, N=200, seed=15)
    reduced = kalman_bucy(reduce(model), 0.0, obs)
    assert np.array_equal(particle.pi_h, again.pi_h)
    assert math.isfinite(log_evidence)
    assert float(np.mean((particle.pi_h - reduced.pi_h) ** 2)) < 5e-4


def test_marginal_filter_needs_linear_structure():
    model = example_model(ExampleTag.EXAMPLE3)
    obs = simulate_multiscale(model, 1.0, 0.2, 0.02, seed=1)
    with pytest.raises(ModelError):
        marginal_particle_filter(model, 1.0, obs, N=10)



def test_particle_evidence_matches_reduced_log_likelihood():
    reduced, embedded = _linear_gaussian()
    obs = simulate_reduced(reduced, 0.0, 1.0, 0.001, seed=31)
    _, log_evidence = particle_filter(embedded, 0.0, obs, N=20000, seed=32)
    kalman = kalman_bucy(reduced, 0.0, obs)
    loglik = log_likelihood_from_drift(kalman.pi_h[:-1], obs.increments("Y"), obs.dt, reduced.Sigma)
    assert log_evidence == pytest.approx(loglik, abs=0.1)


def test_particle_filter_needs_two_particles():
    model = example_model(ExampleTag.EXAMPLE1)
    obs = simulate_multiscale(model, 0.0, 0.2, 0.02, seed=1)
    with pytest.raises(ModelError):
        particle_filter(model, 0.0, obs, N=1)


def test_particle_filter_reports_degenerate_weights():
    model = ModelSpec(
        h=lambda x, u, theta: 1e200 * np.ones_like(x),
        g=lambda x, u, theta: -u,
        tau=lambda x, u, theta: np.ones_like(u),
        b=lambda x, u, theta: -x,
        sigma=lambda x, u, theta: np.ones_like(x),
        Sigma=0.1,
        delta=0.5,
        theta_bounds=(0.0, 1.0),
    )
    obs = Path(dt=0.02, n_steps=3, channels={"Y": [0.0, 0.01, 0.0, 0.02]})
    with pytest.raises(DegeneracyError) as info:
        particle_filter(model, 0.5, obs, N=10)
    assert info.value.step == 0
