"""Synthetic prediction studies with known true effects, and exact estimands.

The generators draw true effects, noisy estimates and forecasts from simple
known processes; ``brute_force_estimand`` evaluates bias and risk directly
against the true effects by plain averaging. Together they are the ground
truth for checking the Monte Carlo machinery in :mod:`forecast_eval.inference`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .baselines import replication_probability
from .data_model import EffectEstimates, ForecastMatrix, ReplicationDataset
from .inference import EstimandKind, EstimandSpec, EstimandError
from .losses import LossKind

MAX_RETRIES = 100


@dataclass(frozen=True)
class PointMass:
    value: float = 0.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class NormalPrior:
    mean: float = 0.0
    variance: float = 1.0

    def draw(self, rng, size):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(size)


@dataclass(frozen=True)
class TwoPointPrior:
    low: float = -1.0
    high: float = 1.0
    p_high: float = 0.5

    def draw(self, rng, size):
        return np.where(rng.random(size) < self.p_high, self.high, self.low)


@dataclass(frozen=True)
class SyntheticStudySpec:
    """Recipe for a synthetic effect study.

    ``X[k, f] = mu[k] + forecaster_bias + a[f] + e[k, f]`` with forecaster
    offsets ``a ~ N(0, forecaster_effect_sd^2)`` and cell noise
    ``e ~ N(0, forecaster_noise_sd^2)``. ``group_biases``, pairs of
    ``(label, bias)``, splits forecasters round-robin into groups with their
    own bias.
    """

    K: int
    F: int
    true_effect_prior: object = NormalPrior()
    noise_sd: float | Sequence[float] = 0.1
    forecaster_bias: float = 0.0
    forecaster_noise_sd: float = 1.0
    forecaster_effect_sd: float = 0.0
    missing_rate: float = 0.0
    correlation: float = 0.0
    group_biases: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.F < 1:
            raise ValueError("K and F must be positive")
        if np.any(np.asarray(self.noise_sd) < 0) or self.forecaster_noise_sd < 0 \
                or self.forecaster_effect_sd < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.correlation < 1.0:
            raise ValueError("correlation must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticStudy:
    mu: np.ndarray
    estimates: EffectEstimates
    forecasts: ForecastMatrix
    retries: int = 0


def _missing_mask(rng, K, F, rate):
    for attempt in range(MAX_RETRIES + 1):
        mask = rng.random((K, F)) < rate
        if not mask.all(axis=1).any():
            return mask, attempt
    raise RuntimeError(f"could not draw a valid missing pattern in {MAX_RETRIES} retries")


def generate(spec: SyntheticStudySpec) -> SyntheticStudy:
    """Draw one study.

    Missing cells are redrawn (up to ``MAX_RETRIES`` times, from the same
    stream) until every treatment keeps a forecast. Forecasters left with no
    forecasts are dropped, as they would be absent from real data.
    """
    rng = np.random.default_rng(spec.seed)
    K, F = spec.K, spec.F
    mu = spec.true_effect_prior.draw(rng, K)
    sd = np.broadcast_to(np.asarray(spec.noise_sd, float), (K,))
    cov = np.outer(sd, sd) * spec.correlation
    np.fill_diagonal(cov, sd**2)
    if spec.correlation > 0:
        vals, vecs = np.linalg.eigh(cov)
        y = mu + vecs @ (np.sqrt(np.clip(vals, 0, None)) * rng.standard_normal(K))
    else:
        y = mu + sd * rng.standard_normal(K)

    bias = np.full(F, float(spec.forecaster_bias))
    groups = None
    if spec.group_biases:
        labels = [str(g) for g, _ in spec.group_biases]
        assign = np.arange(F) % len(labels)
        bias = np.array([spec.group_biases[i][1] for i in assign], float)
        groups = {f"f{j}": labels[assign[j]] for j in range(F)}
    offsets = spec.forecaster_effect_sd * rng.standard_normal(F)
    x = mu[:, None] + (bias + offsets)[None, :] \
        + spec.forecaster_noise_sd * rng.standard_normal((K, F))
    mask, retries = _missing_mask(rng, K, F, spec.missing_rate) if spec.missing_rate > 0 \
        else (np.zeros((K, F), bool), 0)

    keep = ~mask.all(axis=0)
    tids = tuple(f"t{k}" for k in range(K))
    fids = tuple(f"f{j}" for j in np.flatnonzero(keep))
    if groups is not None:
        groups = {f: groups[f] for f in fids}
    estimates = EffectEstimates(tids, y, cov)
    forecasts = ForecastMatrix(tids, fids, x[:, keep], mask[:, keep], groups)
    return SyntheticStudy(mu, estimates, forecasts, retries)


def generate_replication(K: int = 44, F: int = 20, *, original_effect=None, true_effect=None,
                         n=100, alpha: float = 0.05, forecast_mean: float = 0.54,
                         forecast_sd: float = 0.1, seed: int = 0):
    """Synthetic replication study.

    ``true_effect`` (normalised) defaults to half the original effect. The
    replication estimate is ``Y* ~ N(mu*, 1/n)``; its p-value and sign are
    recorded. Forecasts are ``forecast_mean`` plus noise, clipped to
    ``[0.01, 0.99]``. Returns ``(dataset, mu_star, true replication probability)``.
    """
    rng = np.random.default_rng(seed)
    if original_effect is None:
        original_effect = rng.uniform(0.05, 0.8, K)
    orig = np.asarray(original_effect, float)
    mu_star = 0.5 * orig if true_effect is None else np.broadcast_to(
        np.asarray(true_effect, float), (K,))
    n = np.broadcast_to(np.asarray(n), (K,)).astype(np.int64)
    y_star = mu_star + rng.standard_normal(K) / np.sqrt(n)
    z = np.sqrt(n) * y_star
    p = np.clip(2.0 * norm.sf(np.abs(z)), 1e-300, 1.0)
    direction = np.where(z >= 0, 1, -1)
    probs = np.clip(forecast_mean + forecast_sd * rng.standard_normal((K, F)), 0.01, 0.99)
    sids = tuple(f"s{k}" for k in range(K))
    forecasts = ForecastMatrix(sids, tuple(f"p{j}" for j in range(F)), probs)
    data = ReplicationDataset(sids, orig, n, p, direction, forecasts, np.full(K, alpha))
    return data, np.array(mu_star), replication_probability(mu_star, n, alpha)


# ------------------------------------------------------------------ oracle

def brute_force_estimand(mu, forecasts: ForecastMatrix, spec: EstimandSpec,
                         model_predictions=None) -> float:
    """Exact estimand against known true effects, by unweighted averaging over
    observed cells. Loops cell by cell on purpose: it must not share code with
    the vectorised estimator it checks."""
    mu = [float(v) for v in np.asarray(mu, float)]
    X = forecasts.predictions
    obs = forecasts.observed
    K, F = forecasts.K, forecasts.F
    tids = list(forecasts.treatment_ids)
    loss = spec.loss
    kind = spec.kind

    def lossf(t, p):
        if loss is LossKind.SQUARED_ERROR:
            return (t - p) ** 2
        return t * (1 - p) ** 2 + (1 - t) * p**2

    def cell_mean(value, rows=range(K)):
        total, count = 0.0, 0
        for k in rows:
            for f in range(F):
                if obs[k, f]:
                    total += value(k, f)
                    count += 1
        if count == 0:
            raise EstimandError("no observed cells")
        return total / count

    if kind is EstimandKind.BIAS_OVERALL:
        return cell_mean(lambda k, f: X[k, f] - mu[k])
    if kind is EstimandKind.BIAS_PER_TREATMENT:
        k0 = tids.index(spec.treatments[0])
        return cell_mean(lambda k, f: X[k, f] - mu[k], rows=[k0])
    if kind is EstimandKind.BIAS_DIFFERENCE:
        k, l = tids.index(spec.treatments[0]), tids.index(spec.treatments[1])
        vals = [(X[k, f] - X[l, f]) - (mu[k] - mu[l]) for f in range(F) if obs[k, f] and obs[l, f]]
        return sum(vals) / len(vals)
    if kind is EstimandKind.BIAS_BY_CATEGORY:
        cats = forecasts.treatment_categories
        rows = [k for k, t in enumerate(tids) if t in cats and cats[t][0] == spec.category]
        return cell_mean(lambda k, f: cats[tids[k]][1] * (X[k, f] - mu[k]), rows=rows)
    if kind is EstimandKind.RISK_FORECASTERS:
        return cell_mean(lambda k, f: lossf(mu[k], X[k, f]))
    if kind is EstimandKind.RISK_ORACLE:
        raise EstimandError("the oracle needs a posterior; pass its predictions as a model")
    pred = [float(v) for v in np.asarray(model_predictions, float)]
    if kind is EstimandKind.RISK_MODEL:
        return sum(lossf(mu[k], pred[k]) for k in range(K)) / K
    return cell_mean(lambda k, f: lossf(mu[k], X[k, f]) - lossf(mu[k], pred[k]))
