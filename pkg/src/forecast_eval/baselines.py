"""Simple benchmark predictors that forecasters are compared against."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data_model import ReplicationDataset, backout_replication_effect, critical_value

VARIANCE_FLOOR = 1e-8
MIN_GIBBS_DRAWS = 100


def null_effect_predictions(K: int) -> np.ndarray:
    """Every treatment has zero effect."""
    if K < 1:
        raise ValueError("K must be at least 1")
    return np.zeros(K)


def random_chance_predictions(K: int) -> np.ndarray:
    """Each study replicates with probability one half."""
    if K < 1:
        raise ValueError("K must be at least 1")
    return np.full(K, 0.5)


def replication_probability(mu_star, n, alpha=0.05):
    """Chance that a two-tailed replication with ``n`` subjects is significant
    in the original direction when the normalised true effect is ``mu_star``."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("sample size must be at least 1")
    out = norm.cdf(np.sqrt(n) * np.asarray(mu_star, float) - critical_value(alpha))
    return float(out) if np.ndim(out) == 0 else out


def null_replication_predictions(K: int, alpha=0.05) -> np.ndarray:
    """Replication probability when every original finding is a false positive.

    Works out to ``alpha / 2``: a significant result half of whose signs agree
    with the original.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    alpha = np.broadcast_to(np.asarray(alpha, float), (K,))
    if np.any(~(alpha > 0) | ~(alpha < 1)):
        raise ValueError("alpha must lie in (0, 1)")
    return norm.cdf(-critical_value(alpha))


# ------------------------------------------------------------- interpolation

class IncentiveKind(str, enum.Enum):
    PIECE_RATE_SELF = "piece_rate_self"
    PIECE_RATE_CHARITY = "piece_rate_charity"
    OTHER = "other"


class InterpolationMode(str, enum.Enum):
    SELFISH = "selfish"
    ALTRUISTIC = "altruistic"


@dataclass(frozen=True)
class EffortConditionSpec:
    condition_id: str
    incentive_kind: IncentiveKind
    expected_own_payment_per_100: float = 0.0
    expected_charity_payment_per_100: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "incentive_kind", IncentiveKind(self.incentive_kind))
        if self.expected_own_payment_per_100 < 0 or self.expected_charity_payment_per_100 < 0:
            raise ValueError(f"condition {self.condition_id!r}: payments must be non-negative")

    def effective_payment(self, mode: InterpolationMode | str) -> float:
        mode = InterpolationMode(mode)
        if self.incentive_kind is IncentiveKind.OTHER:
            return 0.0
        pay = self.expected_own_payment_per_100
        if mode is InterpolationMode.ALTRUISTIC:
            pay += self.expected_charity_payment_per_100
        return pay


def interpolate_anchors(payments, anchors: Sequence[tuple[float, float]]) -> np.ndarray:
    """Piecewise-linear curve through ``(payment, points)`` anchors.

    Outside the anchor range the curve continues along the first or last
    segment.
    """
    xs = np.array([a[0] for a in anchors], float)
    ys = np.array([a[1] for a in anchors], float)
    if len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("anchor payments must be strictly increasing")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("anchors must be finite")
    pay = np.asarray(payments, float)
    out = np.interp(pay, xs, ys)
    hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
    out = np.where(pay > xs[-1], ys[-1] + hi_slope * (pay - xs[-1]), out)
    out = np.where(pay < xs[0], ys[0] + lo_slope * (pay - xs[0]), out)
    return out


def linear_interpolation_predictions(conditions: Sequence[EffortConditionSpec],
                                     anchors: Sequence[tuple[float, float]],
                                     mode: InterpolationMode | str = "selfish") -> np.ndarray:
    """Predicted points for each condition from its expected piece-rate pay.

    ``selfish`` ignores money earned for charity; ``altruistic`` counts it
    like the participant's own pay. Conditions that are not piece rates are
    predicted at the zero-payment level.
    """
    if len(anchors) != 3:
        raise ValueError("linear interpolation needs exactly three anchors")
    payments = np.array([c.effective_payment(mode) for c in conditions], float)
    if np.any(payments < 0):
        raise ValueError("effective payments must be non-negative")
    return interpolate_anchors(payments, anchors)


# ---------------------------------------------------------- regression model

@dataclass(frozen=True)
class GibbsRegressionResult:
    """``probabilities`` averages the sampled ``draws`` (one per iteration and
    study). ``parameter_draws`` are the same iterations with the replication
    noise integrated out, ``Phi((sqrt(n) b - c) / sqrt(1 + n v))``; they carry
    only the regression's parameter uncertainty and share its mean."""

    probabilities: np.ndarray
    draws: np.ndarray
    parameter_draws: np.ndarray
    floor_hit_rate: float
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    seed: int | None = None

    @property
    def mean_probability(self) -> float:
        return float(self.probabilities.mean())


def _ols(design: np.ndarray, target: np.ndarray):
    """Coefficients and homoskedastic covariance ``s^2 (Z'Z)^-1``."""
    n, p = design.shape
    gram_inv = np.linalg.inv(design.T @ design)
    coef = gram_inv @ design.T @ target
    resid = target - design @ coef
    s2 = float(resid @ resid) / (n - p) if n > p else 0.0
    return coef, s2 * gram_inv


def _mvn(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, size: int) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return mean + rng.standard_normal((size, len(mean))) @ factor.T


def gibbs_regression_replication(dataset: ReplicationDataset, draws: int = 5000,
                                 seed=0) -> GibbsRegressionResult:
    """Replication probabilities from a heteroskedastic regression of the
    replication effect on the original effect, propagating coefficient
    uncertainty.

    Each iteration draws OLS coefficients ``beta``, regresses the squared
    residuals on the same design to draw variance coefficients ``gamma``,
    draws a replication effect ``N(beta'Z_k, gamma'Z_k)`` and converts it to
    a replication probability. Negative variances are floored at
    ``VARIANCE_FLOOR`` and counted.
    """
    if dataset.K < 3:
        raise ValueError("the regression model needs at least three studies")
    if draws < MIN_GIBBS_DRAWS:
        raise ValueError(f"need at least {MIN_GIBBS_DRAWS} draws, got {draws}")
    orig = dataset.original_effect
    if np.ptp(orig) == 0:
        raise ValueError("original effects are constant; the regression is not identified")
    y_star = backout_replication_effect(dataset)
    Z = np.column_stack([np.ones(dataset.K), orig])
    root_n = np.sqrt(dataset.replication_n.astype(float))
    c_alpha = critical_value(dataset.alpha)

    rng = np.random.default_rng(seed)
    beta_hat, beta_cov = _ols(Z, y_star)
    betas = _mvn(rng, beta_hat, beta_cov, draws)

    gram_inv = np.linalg.inv(Z.T @ Z)
    hat = gram_inv @ Z.T
    sq_resid = (betas @ Z.T - y_star) ** 2
    gamma_hats = sq_resid @ hat.T
    s2 = np.sum((sq_resid - gamma_hats @ Z.T) ** 2, axis=1) / (dataset.K - 2)
    # gamma | beta ~ N(gamma_hat, s2 (Z'Z)^-1)
    vals, vecs = np.linalg.eigh(gram_inv)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    gammas = gamma_hats + np.sqrt(s2)[:, None] * (rng.standard_normal((draws, 2)) @ factor.T)

    means = betas @ Z.T
    variances = gammas @ Z.T
    floored = variances < VARIANCE_FLOOR
    variances = np.where(floored, VARIANCE_FLOOR, variances)
    y_draws = means + np.sqrt(variances) * rng.standard_normal(means.shape)
    probs = norm.cdf(root_n * y_draws - c_alpha)
    conditional = norm.cdf((root_n * means - c_alpha) / np.sqrt(1.0 + root_n**2 * variances))
    return GibbsRegressionResult(
        probabilities=probs.mean(axis=0),
        draws=probs,
        parameter_draws=conditional,
        floor_hit_rate=float(floored.mean()),
        beta_hat=beta_hat,
        gamma_hat=hat @ (Z @ beta_hat - y_star) ** 2,
        seed=seed,
    )


def plugin_regression_replication(dataset: ReplicationDataset) -> np.ndarray:
    """Point-estimate version: ``Phi(sqrt(n) * beta_hat'Z_k - c)``, no uncertainty."""
    orig = dataset.original_effect
    Z = np.column_stack([np.ones(dataset.K), orig])
    beta_hat, _ = _ols(Z, backout_replication_effect(dataset))
    return replication_probability(Z @ beta_hat, dataset.replication_n, dataset.alpha)
