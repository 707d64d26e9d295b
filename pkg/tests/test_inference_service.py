import math

import numpy as np
import pytest

from app.config import settings
from app.exceptions import ModelError
from app.schemas.model import ExampleTag, ReducedLinearModel
from app.schemas.paths import Path
from app.services.inference_service import (
    check_linear_identifiability,
    evaluate_likelihood,
    fisher_closed,
    fisher_example1,
    fisher_example2,
    fisher_information,
    fisher_numeric,
    golden_section_max,
    likelihood_profile,
    log_likelihood_from_drift,
    mle,
    reduced_log_likelihood,
    score,
    theoretical_stderr,
)
from app.services.model_service import DEFAULT_BOUNDS, embed_reduced, example_model, reduce
from app.services.simulate_service import simulate_multiscale, simulate_reduced, simulate_reduced_chain


def _reduced_path(tag, alpha, T=25.0, dt=0.02, seed=0):
    model = example_model(tag)
    return model, simulate_reduced(reduce(model), alpha, T, dt, seed)


def test_log_likelihood_from_drift():
    pi = np.array([1.0, 2.0])
    dY = np.array([0.5, -0.5])
    expected = ((0.5 - 1.0) - 0.5 * (1.0 + 4.0) * 0.1) / 0.25
    assert log_likelihood_from_drift(pi, dY, 0.1, 0.5) == pytest.approx(expected)


def test_golden_section_finds_maximum():
    found = golden_section_max(lambda x: -(x - 1.3) ** 2, 0.0, 3.0, 1e-7)
    assert found == pytest.approx(1.3, abs=1e-6)


@pytest.mark.parametrize("alpha, stderr", [(0.0, 0.0900), (1.0, 0.0542), (1.5, 0.0422)])
def test_example1_fisher_information(alpha, stderr):
    closed = fisher_closed(reduce(example_model(ExampleTag.EXAMPLE1)), alpha)
    assert closed == pytest.approx(fisher_example1(alpha, 0.1, 0.1), rel=1e-8)
    assert round(theoretical_stderr(closed, 25.0), 4) == stderr


@pytest.mark.parametrize("alpha, stderr", [(0.5, 0.2303), (1.0, 0.1917), (1.5, 0.1734)])
def test_example2_fisher_information(alpha, stderr):
    closed = fisher_closed(reduce(example_model(ExampleTag.EXAMPLE2)), alpha)
    assert closed == pytest.approx(fisher_example2(alpha, 0.1, 0.1), rel=1e-8)
    assert round(theoretical_stderr(closed, 25.0), 4) == stderr


def test_example1_fisher_at_zero():
    assert fisher_example1(0.0, 0.1, 0.1) == pytest.approx(4.9385, rel=1e-4)


def test_fisher_information_dispatches_on_model_class():
    model = example_model(ExampleTag.EXAMPLE1)
    assert fisher_information(model, 1.0) == pytest.approx(fisher_example1(1.0, 0.1, 0.1), rel=1e-8)


def test_fisher_closed_is_zero_without_theta_dependence():
    reduced = ReducedLinearModel(
        abar=lambda theta: 1.0,
        betabar=lambda theta: 1.0,
        gamma=lambda theta: 1.0,
        Sigma=0.1,
        d_abar=lambda theta: 0.0,
        d_betabar=lambda theta: 0.0,
        d_gamma=lambda theta: 0.0,
    )
    assert fisher_closed(reduced, 0.3) == 0.0
    assert not check_linear_identifiability(reduced, np.linspace(0.0, 1.0, 11), 0.1)


def test_theoretical_stderr_validation():
    assert theoretical_stderr(4.0, 25.0) == pytest.approx(0.1)
    with pytest.raises(ModelError):
        theoretical_stderr(0.0, 25.0)
    with pytest.raises(ModelError):
        theoretical_stderr(1.0, 0.0)


def test_fisher_numeric_needs_long_horizon():
    with pytest.raises(ModelError):
        fisher_numeric(example_model(ExampleTag.EXAMPLE1), 0.0, 50.0, 0.02, seed=0)


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_fisher_numeric_matches_closed_form(alpha):
    model = example_model(ExampleTag.EXAMPLE1)
    numeric = fisher_numeric(model, alpha, 2000.0, 0.002, seed=17)
    assert numeric == pytest.approx(fisher_example1(alpha, 0.1, 0.1), rel=0.05)


def test_examples_are_identifiable():
    for tag in (ExampleTag.EXAMPLE1, ExampleTag.EXAMPLE2):
        model = example_model(tag)
        lo, hi = model.theta_bounds
        assert check_linear_identifiability(reduce(model), np.linspace(lo, hi, 36), 0.1)


def test_likelihood_rejects_theta_outside_bounds():
    model, obs = _reduced_path(ExampleTag.EXAMPLE1, 1.0, T=1.0)
    with pytest.raises(ModelError):
        reduced_log_likelihood(model, 10.0, obs)


@pytest.mark.parametrize("tag", [ExampleTag.EXAMPLE1, ExampleTag.EXAMPLE2])
def test_score_matches_finite_difference_of_likelihood(tag):
    model, obs = _reduced_path(tag, 1.0, seed=4)
    theta, h = 0.9, 1e-4
    fd = (reduced_log_likelihood(model, theta + h, obs) - reduced_log_likelihood(model, theta - h, obs)) / (2.0 * h)
    assert score(model, theta, obs) == pytest.approx(fd, rel=1e-4, abs=1e-4)


def test_evaluate_likelihood():
    model, obs = _reduced_path(ExampleTag.EXAMPLE2, 1.0, T=5.0, seed=2)
    evaluation = evaluate_likelihood(model, 1.2, obs)
    assert evaluation.T == pytest.approx(5.0)
    assert evaluation.loglik == pytest.approx(reduced_log_likelihood(model, 1.2, obs))
    assert evaluation.score == pytest.approx(score(model, 1.2, obs))


def test_likelihood_profile_marks_failures():
    model, obs = _reduced_path(ExampleTag.EXAMPLE1, 1.0, T=1.0)
    values = likelihood_profile(model, obs, [0.5, 1.0, 10.0])
    assert np.all(np.isfinite(values[:2]))
    assert values[2] == -math.inf


def test_mle_recovers_parameter_from_reduced_data():
    model, obs = _reduced_path(ExampleTag.EXAMPLE1, 1.0, seed=7)
    result = mle(model, obs)
    assert not result.clamped
    assert abs(result.theta_hat - 1.0) < 0.25
    assert result.fisher == pytest.approx(fisher_example1(result.theta_hat, 0.1, 0.1), rel=1e-8)
    assert result.theoretical_stderr == pytest.approx(1.0 / math.sqrt(25.0 * result.fisher))
    assert abs(score(model, result.theta_hat, obs)) <= 1e-4 * obs.T
    assert result.loglik == pytest.approx(reduced_log_likelihood(model, result.theta_hat, obs))


def test_mle_agrees_with_fine_grid_argmax():
    model, obs = _reduced_path(ExampleTag.EXAMPLE2, 1.0, seed=8)
    result = mle(model, obs, compute_fisher=False)
    lo, hi = model.theta_bounds
    grid = np.linspace(lo, hi, 401)
    best = grid[int(np.argmax(likelihood_profile(model, obs, grid)))]
    assert abs(result.theta_hat - best) <= max(1e-3, (grid[1] - grid[0]) / 2.0)
    assert result.fisher == 0.0
    assert result.theoretical_stderr is None


def test_mle_clamps_to_bound():
    base = example_model(ExampleTag.EXAMPLE1)
    obs = simulate_reduced(reduce(base), 1.0, 25.0, 0.02, seed=3)
    model = example_model(ExampleTag.EXAMPLE1, theta_bounds=(-1.0, 0.0))
    result = mle(model, obs, compute_fisher=False)
    assert result.clamped
    assert result.theta_hat == 0.0


def test_mle_for_chain_model():
    model = example_model(ExampleTag.EXAMPLE3)
    obs = simulate_reduced_chain(1.0, 0.1, 25.0, 0.02, seed=5)
    result = mle(model, obs, compute_fisher=False)
    lo, hi = model.theta_bounds
    assert lo <= result.theta_hat <= hi
    assert abs(result.theta_hat - 1.0) < 1.0


def test_chain_score_is_finite_difference():
    model = example_model(ExampleTag.EXAMPLE3)
    obs = simulate_reduced_chain(1.0, 0.1, 5.0, 0.02, seed=6)
    h = 1e-4
    expected = (reduced_log_likelihood(model, 1.0 + h, obs) - reduced_log_likelihood(model, 1.0 - h, obs)) / (2.0 * h)
    assert score(model, 1.0, obs) == pytest.approx(expected)


def test_score_matches_finite_difference_on_random_pairs():
    model = example_model(ExampleTag.EXAMPLE1)
    rng = np.random.default_rng(2024)
    h = 1e-4
    for theta, seed in zip(rng.uniform(-0.5, 1.5, 20), rng.integers(0, 10_000, 20)):
        obs = simulate_multiscale(model, 0.5, 25.0, 0.02, seed=int(seed))
        fd = (reduced_log_likelihood(model, theta + h, obs) - reduced_log_likelihood(model, theta - h, obs)) / (2.0 * h)
        assert abs(score(model, theta, obs) - fd) <= 1e-3 * obs.T


def test_likelihood_ignores_hidden_channels():
    model = example_model(ExampleTag.EXAMPLE1)
    obs = simulate_multiscale(model, 1.0, 5.0, 0.02, seed=12)
    swapped = Path(
        dt=obs.dt,
        n_steps=obs.n_steps,
        channels={"Y": obs.channel("Y"), "U": obs.channel("X"), "X": obs.channel("U")},
    )
    assert reduced_log_likelihood(model, 0.8, swapped) == reduced_log_likelihood(model, 0.8, obs)


def test_argmax_is_invariant_under_observation_scaling():
    reduced = reduce(example_model(ExampleTag.EXAMPLE1))
    c = 3.0
    scaled = ReducedLinearModel(
        abar=lambda theta: c * reduced.abar(theta),
        betabar=reduced.betabar,
        gamma=reduced.gamma,
        Sigma=c * reduced.Sigma,
        d_abar=lambda theta: c * reduced.d_abar(theta),
        d_betabar=reduced.d_betabar,
        d_gamma=reduced.d_gamma,
    )
    bounds = DEFAULT_BOUNDS[ExampleTag.EXAMPLE1]
    obs = simulate_reduced(reduced, 1.0, 25.0, 0.02, seed=9)
    scaled_obs = Path(dt=obs.dt, n_steps=obs.n_steps, channels={"Y": c * obs.channel("Y")})

    plain = mle(embed_reduced(reduced, bounds), obs, compute_fisher=False)
    rescaled = mle(embed_reduced(scaled, bounds), scaled_obs, compute_fisher=False)
    assert rescaled.theta_hat == pytest.approx(plain.theta_hat, abs=1e-4)
    assert rescaled.loglik == pytest.approx(plain.loglik, rel=1e-9)


def test_fisher_information_of_chain_uses_fine_grid(monkeypatch):
    monkeypatch.setattr(settings, "FISHER_T", 100.0)
    monkeypatch.setattr(settings, "FISHER_DT", 0.01)
    model = example_model(ExampleTag.EXAMPLE3)
    assert fisher_information(model, 1.0, seed=4) == fisher_numeric(model, 1.0, 100.0, 0.01, seed=4)


@pytest.mark.slow
def test_chain_fisher_numeric_matches_reported_stderr():
    model = example_model(ExampleTag.EXAMPLE3)
    fisher = fisher_numeric(model, 0.7, 2000.0, settings.FISHER_DT, seed=23)
    assert theoretical_stderr(fisher, 25.0) == pytest.approx(0.1917, rel=0.1)
