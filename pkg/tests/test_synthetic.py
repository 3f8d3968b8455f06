import numpy as np
import pytest

from forecast_eval import synthetic
from forecast_eval.data_model import ForecastMatrix
from forecast_eval.empirical_bayes import PosteriorSampler, fit_posterior
from forecast_eval.inference import EstimandSpec, estimate
from forecast_eval.losses import LossKind, loss
from forecast_eval.synthetic import (
    NormalPrior,
    PointMass,
    SyntheticStudySpec,
    TwoPointPrior,
    brute_force_estimand,
    generate,
    generate_replication,
)


def test_point_mass_zero_noise():
    st_ = generate(SyntheticStudySpec(K=4, F=3, true_effect_prior=PointMass(0.0), noise_sd=0.0,
                                      forecaster_noise_sd=0.0))
    np.testing.assert_array_equal(st_.estimates.estimates, 0.0)
    np.testing.assert_array_equal(st_.forecasts.predictions, 0.0)


def test_normal_prior_variance():
    st_ = generate(SyntheticStudySpec(K=10_000, F=1, true_effect_prior=NormalPrior(1.0, 2.5),
                                      seed=1))
    assert np.var(st_.mu, ddof=1) == pytest.approx(2.5, rel=0.05)


def test_two_point_prior():
    mu = TwoPointPrior(-1.0, 3.0, 0.25).draw(np.random.default_rng(0), 4000)
    assert set(np.unique(mu)) == {-1.0, 3.0}
    assert np.mean(mu == 3.0) == pytest.approx(0.25, abs=0.03)


def test_missing_rate_keeps_every_treatment():
    for seed in range(20):
        st_ = generate(SyntheticStudySpec(K=6, F=10, missing_rate=0.9, seed=seed))
        obs = st_.forecasts.observed
        assert obs.any(axis=1).all() and obs.any(axis=0).all()
        assert st_.forecasts.F <= 10
        assert st_.retries <= synthetic.MAX_RETRIES


def test_empty_forecasters_dropped():
    st_ = generate(SyntheticStudySpec(K=2, F=40, missing_rate=0.8, seed=1,
                                      group_biases=(("a", 0.0), ("b", 1.0))))
    assert st_.forecasts.F < 40
    assert set(st_.forecasts.forecaster_groups) == set(st_.forecasts.forecaster_ids)


def test_retries_exhausted():
    # each of 50 rows is empty with probability 0.9**10, about a third
    with pytest.raises(RuntimeError, match="retries"):
        generate(SyntheticStudySpec(K=50, F=10, missing_rate=0.9, seed=0))


def test_deterministic():
    spec = SyntheticStudySpec(K=5, F=4, missing_rate=0.3, correlation=0.5, seed=3)
    a, b = generate(spec), generate(spec)
    np.testing.assert_array_equal(a.forecasts.filled(), b.forecasts.filled())
    np.testing.assert_array_equal(a.estimates.estimates, b.estimates.estimates)


def test_correlated_noise_covariance():
    st_ = generate(SyntheticStudySpec(K=3, F=2, noise_sd=[0.1, 0.2, 0.3], correlation=0.4))
    cov = st_.estimates.covariance
    assert cov[0, 1] == pytest.approx(0.4 * 0.1 * 0.2)
    assert cov[2, 2] == pytest.approx(0.09)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticStudySpec(K=2, F=2, missing_rate=1.0)
    with pytest.raises(ValueError):
        SyntheticStudySpec(K=2, F=2, noise_sd=-1.0)


def test_group_bias_assignment():
    st_ = generate(SyntheticStudySpec(K=400, F=6, true_effect_prior=PointMass(0.0),
                                      forecaster_noise_sd=0.1,
                                      group_biases=(("a", 1.0), ("b", -1.0)), seed=2))
    groups = st_.forecasts.forecaster_groups
    x = st_.forecasts.predictions
    for j, fid in enumerate(st_.forecasts.forecaster_ids):
        target = 1.0 if groups[fid] == "a" else -1.0
        assert x[:, j].mean() == pytest.approx(target, abs=0.05)


# ----------------------------------------------------------------- oracles

def _fm(x):
    x = np.asarray(x, float)
    return ForecastMatrix(tuple(f"t{k}" for k in range(x.shape[0])),
                          tuple(f"f{j}" for j in range(x.shape[1])), x)


def test_brute_force_hand_enumeration():
    mu = [0.0, 1.0, 2.0]
    x = np.array([[1.0, 0.0], [1.0, 2.0], [1.0, 4.0]])
    # cell errors (1, 0, 0, 1, -1, 2) average to 0.5
    assert brute_force_estimand(mu, _fm(x), EstimandSpec("bias_overall")) == 0.5


def test_brute_force_shift():
    mu = np.array([0.5, -1.0, 3.0])
    x = mu[:, None] + np.full((3, 4), 2.0)
    assert brute_force_estimand(mu, _fm(x), EstimandSpec("bias_overall")) == 2.0


def test_brute_force_perfect_model():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=4)
    x = rng.normal(size=(4, 3))
    cr = brute_force_estimand(mu, _fm(x), EstimandSpec("comparative_risk", model="mu"), mu)
    assert cr == pytest.approx(np.mean((x - mu[:, None]) ** 2), abs=1e-14)
    assert cr >= 0


def test_consistency_with_vanishing_noise():
    """Point estimates approach the exact estimand as noise shrinks and F grows."""
    errors = []
    for noise, F in ((0.5, 20), (0.05, 200), (0.005, 2000)):
        spec = SyntheticStudySpec(K=10, F=F, noise_sd=noise, forecaster_bias=1.0,
                                  forecaster_noise_sd=1.0, seed=5)
        st_ = generate(spec)
        _, sampler = fit_posterior(st_.estimates, "parametric", seed=0)
        got = estimate(st_.forecasts, sampler, EstimandSpec("bias_overall"), samples=2000,
                       seed=0).mean
        truth = brute_force_estimand(st_.mu, st_.forecasts, EstimandSpec("bias_overall"))
        errors.append(abs(got - truth))
    assert errors[-1] < 0.02
    assert errors[-1] < errors[0]


def test_replication_generator():
    data, mu_star, prob = generate_replication(K=30, F=5, seed=1)
    assert data.K == 30 and data.forecasts.F == 5
    assert np.all((prob > 0) & (prob < 1))
    np.testing.assert_allclose(mu_star, 0.5 * data.original_effect)
    p = data.forecaster_probs
    assert np.all((p >= 0.01) & (p <= 0.99))


def test_brier_matches_bernoulli_outcomes():
    """Expected Brier against mu equals the average score on binary outcomes."""
    data, _, prob = generate_replication(K=40, F=10, seed=2)
    x = data.forecaster_probs
    expected = loss(LossKind.BRIER, prob[:, None], x).mean()
    rng = np.random.default_rng(3)
    outcomes = rng.random((20_000, 40)) < prob
    binary = np.mean([((o[:, None] - x) ** 2).mean() for o in outcomes[:2000]])
    full = ((outcomes[:, :, None] - x[None]) ** 2).mean()
    assert full == pytest.approx(expected, abs=3e-3)
    assert binary == pytest.approx(expected, abs=1e-2)


@pytest.mark.parametrize("kind", ["risk_forecasters", "bias_overall"])
def test_brute_force_rejects_nothing_observed_free(kind):
    # a single observed cell is enough
    x = np.array([[1.0, np.nan], [np.nan, 2.0]])
    fc = ForecastMatrix(("a", "b"), ("f", "g"), x)
    v = brute_force_estimand([0.0, 0.0], fc, EstimandSpec(kind))
    assert v == pytest.approx(1.5 if kind == "bias_overall" else 2.5)


def test_oracle_needs_model():
    with pytest.raises(ValueError):
        brute_force_estimand([0.0], _fm([[0.0]]), EstimandSpec("risk_oracle"))
    sampler = PosteriorSampler.point_mass([0.0])
    assert sampler.is_degenerate
