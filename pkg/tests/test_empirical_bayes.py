import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forecast_eval.data_model import DataValidationError, EffectEstimates
from forecast_eval.empirical_bayes import (
    EBConvergenceError,
    EBFitError,
    PosteriorSampler,
    ReplicationLink,
    _log_lik_matrix,
    default_grid,
    fit_nonparametric_eb,
    fit_parametric_eb,
    fit_posterior,
    marginal_log_likelihood,
    npmle_em,
    oracle_predictions,
    parametric_posterior,
    resolve_eb_kind,
    sample_posterior,
)
from forecast_eval.losses import LossKind


def _est(y, var=1.0):
    y = np.asarray(y, float)
    return EffectEstimates.from_variances([f"t{i}" for i in range(len(y))], y,
                                          np.broadcast_to(var, y.shape))


def _two_point_data(seed=0):
    rng = np.random.default_rng(seed)
    mu = np.where(rng.random(50) < 0.5, -2.0, 2.0)
    mu[:25], mu[25:] = -2.0, 2.0  # exactly balanced
    return _est(mu + 0.1 * rng.standard_normal(50), 0.01)


# ------------------------------------------------------------------ parametric

def test_constant_estimates_give_degenerate_prior():
    fit = fit_parametric_eb(_est([0.7] * 6, 0.2))
    assert fit.prior_variance == 0.0
    np.testing.assert_allclose(fit.posterior_mean, 0.7, atol=1e-12)
    np.testing.assert_array_equal(fit.posterior_covariance, 0.0)


@pytest.mark.parametrize("half", [1.0, 2.0, 0.4])
def test_two_point_matches_grid_oracle(half):
    y = np.array([-half, half])
    fit = fit_parametric_eb(_est(y))
    # brute force: m = 0 by symmetry; maximise over a fine tau2 grid
    taus = np.linspace(0.0, 10.0, 1_000_001)
    ll = -np.log(2 * np.pi) - np.log(taus + 1) - 0.5 * np.sum(y**2) / (taus + 1)
    tau_grid = taus[np.argmax(ll)]
    assert fit.prior_mean == pytest.approx(0.0, abs=1e-12)
    assert fit.prior_variance == pytest.approx(tau_grid, abs=1e-5)
    shrink = fit.prior_variance / (fit.prior_variance + 1)
    np.testing.assert_allclose(fit.posterior_mean, shrink * y, atol=1e-12)


def test_fixed_prior_closed_form():
    mean, cov = parametric_posterior(_est([2.0]), 0.0, 1.0)
    assert mean[0] == pytest.approx(1.0, abs=1e-10)
    assert cov[0, 0] == pytest.approx(0.5, abs=1e-10)


def _random_study(seed, K=8, correlated=True):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((K, K)) * 0.2
    cov = a @ a.T + np.diag(rng.uniform(0.05, 0.5, K)) if correlated \
        else np.diag(rng.uniform(0.05, 0.5, K))
    y = rng.normal(1.0, 1.0, K)
    return EffectEstimates([f"t{i}" for i in range(K)], y, cov)


@pytest.mark.parametrize("seed", range(3))
def test_parametric_beats_surrounding_grid(seed):
    data = _random_study(seed)
    fit = fit_parametric_eb(data)
    best = marginal_log_likelihood(data.estimates, data.covariance, fit.prior_mean,
                                   fit.prior_variance)
    assert best == pytest.approx(fit.log_likelihood, abs=1e-9)
    ms = fit.prior_mean + np.linspace(-1, 1, 50)
    ts = np.clip(fit.prior_variance + np.linspace(-1, 1, 50), 0.0, None)
    worst_gap = max(marginal_log_likelihood(data.estimates, data.covariance, m, t) - best
                    for m in ms for t in ts)
    assert worst_gap <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_parametric_closed_form_cross_check(seed):
    data = _random_study(seed)
    fit = fit_parametric_eb(data)
    y, cov = data.estimates, data.covariance
    v = cov + fit.prior_variance * np.eye(data.K)
    expected = y - cov @ np.linalg.solve(v, y - fit.prior_mean)
    np.testing.assert_allclose(fit.posterior_mean, expected, atol=1e-8)
    assert np.linalg.eigvalsh(fit.posterior_covariance).min() >= -1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_parametric_shrinkage_between_prior_and_data(seed):
    data = _random_study(seed, K=6, correlated=False)
    fit = fit_parametric_eb(data)
    lo = np.minimum(fit.prior_mean, data.estimates) - 1e-12
    hi = np.maximum(fit.prior_mean, data.estimates) + 1e-12
    assert np.all((fit.posterior_mean >= lo) & (fit.posterior_mean <= hi))


def test_parametric_errors():
    with pytest.raises(EBFitError):
        fit_parametric_eb(_est([1.0]))
    with pytest.raises(DataValidationError):
        EffectEstimates(("a", "b"), [0, 1], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(EBConvergenceError) as info:
        fit_parametric_eb(_est([-2.0, 2.0]), max_iter=3)
    assert info.value.last_iterate is not None


# --------------------------------------------------------------- nonparametric

def _mass_near(fit, atom, radius):
    return fit.prior_weights[np.abs(fit.grid - atom) <= radius + 1e-12].sum()


@pytest.mark.parametrize("seed", range(10))
def test_npmle_two_point_recovery(seed):
    # the cluster means wander by sigma / 5 = 0.02, more than one grid step,
    # so "near" is measured on the scale of the noise: two sigma
    fit = fit_nonparametric_eb(_two_point_data(seed))
    for atom in (-2.0, 2.0):
        assert _mass_near(fit, atom, 0.2) >= 0.45
    assert fit.prior_weights.sum() == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(fit.posterior_weights.sum(axis=1), 1.0, atol=1e-10)
    assert len(fit.grid) == 300


def test_npmle_two_point_exact_atoms_within_one_step():
    y = np.repeat([-2.0, 2.0], 25)
    fit = fit_nonparametric_eb(_est(y, 0.01))
    step = fit.grid[1] - fit.grid[0]
    for atom in (-2.0, 2.0):
        assert _mass_near(fit, atom, step) >= 0.45


def test_npmle_trace_monotone():
    fit = fit_nonparametric_eb(_two_point_data(1))
    diffs = np.diff(fit.log_likelihood_trace)
    assert fit.iterations == len(diffs)
    assert np.all(diffs >= 0.0)


def test_npmle_plain_em_steps_monotone():
    """Raw EM steps (no acceleration) never lower the likelihood either."""
    data = _two_point_data(2)
    L = _log_lik_matrix(data.estimates, data.std_errors,
                        default_grid(data.estimates, data.std_errors, 60))
    lik = np.exp(L)
    w = np.full(60, 1 / 60)
    prev = -np.inf
    for _ in range(500):
        cur = np.sum(np.log(lik @ w))
        assert cur >= prev - 1e-12 * abs(cur)
        prev = cur
        w = w * (lik / (lik @ w)[:, None]).mean(axis=0)


def test_npmle_matches_convex_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    y = np.concatenate([rng.normal(-1, 0.5, 10), rng.normal(1.5, 0.3, 10)])
    sd = rng.uniform(0.3, 0.8, 20)
    data = EffectEstimates.from_variances([f"t{i}" for i in range(20)], y, sd**2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_nonparametric_eb(data, grid_size=80)
    lik = np.exp(_log_lik_matrix(y, sd, fit.grid))
    w = cp.Variable(len(fit.grid), nonneg=True)
    prob = cp.Problem(cp.Maximize(cp.sum(cp.log(lik @ w))), [cp.sum(w) == 1])
    with warnings.catch_warnings():
        # tight tolerances make the solver flag its answer as possibly inaccurate
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12,
                   max_iter=500)
    wo = np.clip(np.asarray(w.value).ravel(), 0, None)
    wo /= wo.sum()
    oracle = float(np.sum(np.log(lik @ wo)))
    assert fit.log_likelihood == pytest.approx(oracle, abs=1e-6)
    assert fit.log_likelihood >= oracle - 1e-6


def test_npmle_constant_data_point_mass():
    fit = fit_nonparametric_eb(_est([0.3] * 12, 0.04))
    step = fit.grid[1] - fit.grid[0]
    assert np.all(np.abs(fit.posterior_mean - 0.3) <= step)
    nearest = np.argmin(np.abs(fit.grid - 0.3))
    assert fit.prior_weights[max(nearest - 1, 0):nearest + 2].sum() > 0.5


def test_npmle_outlier_shrinks_toward_bulk():
    rng = np.random.default_rng(3)
    y = np.append(rng.normal(0, 0.1, 29), 3.0)
    fit = fit_nonparametric_eb(_est(y, 0.25))
    assert fit.posterior_mean[-1] < 3.0


def test_npmle_concentrates_on_data_as_noise_vanishes():
    rng = np.random.default_rng(4)
    y = rng.normal(0, 1, 40)
    worst = []
    for s in (0.3, 0.03, 0.003):
        fit = fit_nonparametric_eb(_est(y, s**2), grid_size=2000)
        step = fit.grid[1] - fit.grid[0]
        # the average is resolved to within the grid spacing
        assert abs(fit.posterior_mean.mean() - y.mean()) <= step
        worst.append(np.abs(fit.posterior_mean - y).max())
    assert worst[0] > worst[1] > worst[2]
    assert worst[2] < 0.01


def test_npmle_preconditions():
    with pytest.raises(EBFitError, match="parametric"):
        fit_nonparametric_eb(_random_study(0))
    with pytest.warns(UserWarning, match="poorly determined"):
        fit_nonparametric_eb(_est([0.0, 1.0, 2.0]))


def test_npmle_em_converges_with_certificate():
    data = _two_point_data(5)
    fit = fit_nonparametric_eb(data)
    assert fit.optimality_gap <= 1e-9 * max(1.0, abs(fit.log_likelihood))
    L = _log_lik_matrix(data.estimates, data.std_errors, fit.grid)
    with pytest.raises(EBConvergenceError):
        npmle_em(L, max_iter=1)


# ------------------------------------------------------------------- sampling

def test_degenerate_draws_equal_mean():
    fit = fit_parametric_eb(_est([1.5] * 4))
    sampler = PosteriorSampler.from_fit(fit, seed=1)
    assert sampler.is_degenerate
    np.testing.assert_array_equal(sample_posterior(sampler, 50), 1.5)


def test_parametric_sampler_moments():
    mean, cov = parametric_posterior(_est([2.0]), 0.0, 1.0)
    s = PosteriorSampler("parametric", 1, seed=42, mean=mean, covariance=cov)
    d = sample_posterior(s, 100_000)[:, 0]
    assert abs(d.mean() - 1.0) < 0.01
    assert abs(d.var() - 0.5) < 0.01


@pytest.mark.parametrize("kind", ["parametric", "nonparametric"])
def test_sampler_determinism(kind):
    data = _two_point_data()
    _, sampler = fit_posterior(data, kind, seed=9)
    a = sampler.sample(200)
    b = sampler.sample(200)
    np.testing.assert_array_equal(a, b)
    c = sampler.sample(200, np.random.default_rng(10))
    assert not np.array_equal(a, c)


def test_nonparametric_sampler_matches_weights():
    data = _two_point_data()
    fit, sampler = fit_posterior(data, "nonparametric", seed=3)
    draws = sampler.sample(20_000)
    np.testing.assert_allclose(draws.mean(axis=0), fit.posterior_mean, atol=0.01)
    np.testing.assert_allclose(sampler.posterior_mean(), fit.posterior_mean, atol=1e-12)


@pytest.mark.parametrize("kind", ["parametric", "nonparametric"])
def test_linked_posterior_mean_is_exact(kind):
    data = _two_point_data()
    link = ReplicationLink(np.full(50, 30.0), np.full(50, 0.05))
    _, sampler = fit_posterior(data, kind, seed=4, link=link)
    draws = sampler.sample(40_000)
    np.testing.assert_allclose(draws.mean(axis=0), sampler.posterior_mean(), atol=0.01)
    assert np.all((draws >= 0) & (draws <= 1))


def test_shifted_sampler():
    _, s = fit_posterior(_random_study(1), "parametric", seed=5)
    np.testing.assert_allclose(s.shifted(2.5).sample(10), s.sample(10) + 2.5, atol=1e-12)


def test_auto_selection():
    assert resolve_eb_kind(_est(np.arange(30.0)), "auto") == "nonparametric"
    assert resolve_eb_kind(_est(np.arange(29.0)), "auto") == "parametric"
    assert resolve_eb_kind(_random_study(0, K=40), "auto") == "parametric"


# -------------------------------------------------------------------- oracle

def test_oracle_point_mass():
    s = PosteriorSampler.point_mass([0.2, -1.0])
    np.testing.assert_array_equal(oracle_predictions(s), [0.2, -1.0])


def test_oracle_risk_equals_posterior_variance():
    mean, cov = parametric_posterior(_est([2.0]), 0.0, 1.0)
    s = PosteriorSampler("parametric", 1, seed=0, mean=mean, covariance=cov)
    pred = oracle_predictions(s)
    draws = s.sample(200_000)[:, 0]
    assert np.mean((draws - pred[0]) ** 2) == pytest.approx(0.5, abs=0.01)


def test_oracle_beats_random_challengers():
    _, s = fit_posterior(_random_study(2, K=6), "parametric", seed=8)
    draws = s.sample(20_000)
    pred = oracle_predictions(s)
    oracle_risk = np.mean((draws - pred) ** 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        challenger = pred + rng.normal(0, 0.3, len(pred))
        assert oracle_risk <= np.mean((draws - challenger) ** 2)


def test_oracle_brier_domain():
    s = PosteriorSampler.point_mass([0.2, 1.4])
    with pytest.raises(ValueError):
        oracle_predictions(s, LossKind.BRIER)
