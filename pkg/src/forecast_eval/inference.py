"""Bias, risk and comparative risk with posterior and two-level bootstrap uncertainty.

For every Monte Carlo draw ``s`` the true effects are drawn from the
empirical Bayes posterior, treatment weights ``w ~ Dir(1_K)`` and forecaster
weights ``m ~ Dir(1_F)`` are drawn, and the estimand is the weighted average
of its per-cell value over observed cells::

    sum_{k,f observed} w_k m_f G_kf / sum_{k,f observed} w_k m_f

Summaries of the draws give the point estimate (mean), an equal-tailed
interval and tail probabilities. Joint summaries over several estimands use a
max-statistic band for simultaneous coverage.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data_model import ForecastMatrix
from .empirical_bayes import PosteriorSampler, oracle_predictions
from .losses import LossKind, check_probabilities, polynomial_coefficients

DEFAULT_SAMPLES = 10_000
MIN_SAMPLES = 1000
LEVEL = 0.95


class EstimandError(ValueError):
    """An estimand cannot be computed from the supplied inputs."""


class EstimandKind(str, enum.Enum):
    BIAS_OVERALL = "bias_overall"
    BIAS_PER_TREATMENT = "bias_per_treatment"
    BIAS_DIFFERENCE = "bias_difference"
    BIAS_BY_CATEGORY = "bias_by_category"
    RISK_FORECASTERS = "risk_forecasters"
    RISK_MODEL = "risk_model"
    RISK_ORACLE = "risk_oracle"
    COMPARATIVE_RISK = "comparative_risk"


@dataclass(frozen=True)
class EstimandSpec:
    kind: EstimandKind
    loss: LossKind = LossKind.SQUARED_ERROR
    model: str | None = None
    treatments: tuple = ()
    category: str | None = None

    def __post_init__(self):
        kind = EstimandKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        object.__setattr__(self, "treatments", tuple(self.treatments))
        if kind is EstimandKind.BIAS_DIFFERENCE:
            if len(self.treatments) != 2 or self.treatments[0] == self.treatments[1]:
                raise EstimandError("bias_difference needs two distinct treatment ids")
        if kind is EstimandKind.BIAS_PER_TREATMENT and len(self.treatments) != 1:
            raise EstimandError("bias_per_treatment needs exactly one treatment id")
        if kind is EstimandKind.BIAS_BY_CATEGORY and self.category is None:
            raise EstimandError("bias_by_category needs a category")
        if kind in (EstimandKind.RISK_MODEL, EstimandKind.COMPARATIVE_RISK) and not self.model:
            raise EstimandError(f"{kind.value} needs a model id")

    @property
    def label(self) -> str:
        k = self.kind
        if k is EstimandKind.BIAS_OVERALL:
            return "bias"
        if k is EstimandKind.BIAS_PER_TREATMENT:
            return f"bias:treatment={self.treatments[0]}"
        if k is EstimandKind.BIAS_DIFFERENCE:
            return f"bias_difference:{self.treatments[0]}-{self.treatments[1]}"
        if k is EstimandKind.BIAS_BY_CATEGORY:
            return f"bias:category={self.category}"
        if k is EstimandKind.RISK_FORECASTERS:
            return "risk:forecasters"
        if k is EstimandKind.RISK_ORACLE:
            return "risk:oracle"
        if k is EstimandKind.RISK_MODEL:
            return f"risk:{self.model}"
        return f"comparative_risk:{self.model}"


@dataclass(frozen=True)
class EstimateResult:
    """Monte Carlo summary of one estimand."""

    label: str
    mean: float
    ci_lower: float
    ci_upper: float
    pr_negative: float
    pr_positive: float
    p_value: float
    mc_se: float
    n_samples: int
    seed: int | None
    loss: str | None = None
    draws: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def pr_zero(self) -> float:
        return 1.0 - self.pr_negative - self.pr_positive

    def to_row(self, study: str = "") -> dict:
        return {
            "study": study,
            "estimand": self.label,
            "loss": self.loss,
            "mean": self.mean,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "p_value": self.p_value,
            "pr_negative": self.pr_negative,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def summarize(draws: np.ndarray, label: str = "", *, seed=None, loss=None,
              level: float = LEVEL, keep_draws: bool = True) -> EstimateResult:
    draws = np.asarray(draws, float)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    mean = float(draws.mean())
    # keep lower <= mean <= upper when rounding separates them on flat draws
    lo, hi = min(float(lo), mean), max(float(hi), mean)
    neg = float(np.mean(draws < 0))
    pos = float(np.mean(draws > 0))
    p_value = min(1.0, 2.0 * min(float(np.mean(draws <= 0)), float(np.mean(draws >= 0))))
    n = len(draws)
    return EstimateResult(
        label=label, mean=mean, ci_lower=lo, ci_upper=hi, pr_negative=neg, pr_positive=pos,
        p_value=p_value, mc_se=float(draws.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        n_samples=n, seed=seed, loss=None if loss is None else LossKind.parse(loss).value,
        draws=draws if keep_draws else None,
    )


# ----------------------------------------------------------------- the draws

def _dirichlet_ones(rng: np.random.Generator, count: int, size: int) -> np.ndarray:
    e = rng.standard_exponential((count, size))
    return e / e.sum(axis=1, keepdims=True)


class BootstrapDraws:
    """Shared Monte Carlo draws: posterior effects plus bootstrap weights.

    Every estimand computed from one instance uses the same draws, so joint
    summaries (differences, simultaneous bands) are coherent. Each source of
    randomness has its own substream spawned from ``seed``.
    """

    def __init__(self, forecasts: ForecastMatrix, sampler: PosteriorSampler,
                 samples: int = DEFAULT_SAMPLES, seed: int = 0, *,
                 weights: str = "dirichlet"):
        if samples < MIN_SAMPLES:
            raise EstimandError(f"need at least {MIN_SAMPLES} Monte Carlo samples, got {samples}")
        if sampler.dimension != forecasts.K:
            raise EstimandError(
                f"posterior has {sampler.dimension} treatments but forecasts have {forecasts.K}")
        self.forecasts = forecasts
        self.sampler = sampler
        self.samples = int(samples)
        self.seed = seed
        self.weights = weights
        mu_seq, w_seq, m_seq, model_seq = np.random.SeedSequence(seed).spawn(4)
        self._model_seq = model_seq
        self.mu = sampler.sample(self.samples, np.random.default_rng(mu_seq))
        K, F = forecasts.K, forecasts.F
        if weights == "dirichlet":
            self.w = _dirichlet_ones(np.random.default_rng(w_seq), self.samples, K)
            self.m = _dirichlet_ones(np.random.default_rng(m_seq), self.samples, F)
        elif weights == "uniform":
            self.w = np.full((self.samples, K), 1.0 / K)
            self.m = np.full((self.samples, F), 1.0 / F)
        else:
            raise ValueError(f"unknown weight scheme {weights!r}")
        self._obs = forecasts.observed.astype(float)
        self._x = forecasts.filled(0.0)
        self._cache: dict = {}

    # -- helpers over forecasters -------------------------------------------

    def _fsum(self, values: np.ndarray, members: np.ndarray | None = None) -> np.ndarray:
        """``sum_f m_f * observed_kf * values_kf`` for every draw: ``(N, K)``."""
        m = self.m if members is None else self.m * members
        return m @ (self._obs * values).T

    def _counts(self, members=None) -> np.ndarray:
        key = ("counts", None if members is None else members.tobytes())
        if key not in self._cache:
            self._cache[key] = self._fsum(np.ones_like(self._x), members)
        return self._cache[key]

    def _check_loss(self, loss: LossKind, *arrays) -> None:
        if loss.requires_probabilities:
            check_probabilities(self.mu, "posterior draws")
            check_probabilities(self.forecasts.predictions, "forecasts")
            for a in arrays:
                if a is not None:
                    check_probabilities(a, "model predictions")

    def model_draws(self, predictions) -> np.ndarray:
        """Model predictions per draw, ``(N, K)``.

        A 2-D array is a pool of stochastic predictions; one row is picked at
        random for every draw.
        """
        pred = np.asarray(predictions, float)
        K = self.forecasts.K
        if pred.ndim == 1:
            if len(pred) != K:
                raise EstimandError(f"model predicts {len(pred)} treatments, expected {K}")
            return np.broadcast_to(pred, (self.samples, K))
        if pred.ndim != 2 or pred.shape[1] != K:
            raise EstimandError(f"model draws have shape {pred.shape}, expected (D, {K})")
        idx = np.random.default_rng(self._model_seq).integers(pred.shape[0], size=self.samples)
        return pred[idx]

    # -- per-treatment forecaster sums --------------------------------------

    def _bias_cells(self, members=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-treatment forecaster sums of ``X - mu`` and of the weights."""
        counts = self._counts(members)
        return self._fsum(self._x, members) - self.mu * counts, counts

    def _loss_cells(self, loss: LossKind, members=None) -> tuple[np.ndarray, np.ndarray]:
        a, b, c = polynomial_coefficients(loss, self._x)
        counts = self._counts(members)
        total = self._fsum(a, members) + self.mu * self._fsum(b, members)
        if loss is LossKind.SQUARED_ERROR:
            total = total + self.mu**2 * counts
        return total, counts

    def _over_treatments(self, sums, counts, rows=None) -> np.ndarray:
        """Treatment-weighted ratio; ``rows`` restricts and signs treatments."""
        if rows is None:
            num = np.sum(self.w * sums, axis=1)
            den = np.sum(self.w * counts, axis=1)
        else:
            num = np.sum(self.w * rows * sums, axis=1)
            den = np.sum(self.w * np.abs(rows) * counts, axis=1)
        if np.any(den <= 0):
            raise EstimandError("no observed forecasts for the requested treatments")
        return num / den

    # -- estimands ------------------------------------------------------------

    def bias(self, members=None) -> np.ndarray:
        sums, counts = self._bias_cells(members)
        return self._over_treatments(sums, counts)

    def bias_by_treatment(self, members=None) -> np.ndarray:
        """``(N, K)`` draws of every per-treatment bias."""
        sums, counts = self._bias_cells(members)
        if np.any(counts <= 0):
            raise EstimandError("a treatment has no observed forecasts")
        return sums / counts

    def signed_bias(self, signs: np.ndarray) -> np.ndarray:
        """Bias over treatments with non-zero ``signs``, reverse-coding those at -1."""
        sums, counts = self._bias_cells()
        return self._over_treatments(sums, counts, rows=np.asarray(signs, float))

    def bias_difference(self, k: int, l: int) -> np.ndarray:
        both = self.forecasts.observed[k] & self.forecasts.observed[l]
        if not both.any():
            raise EstimandError("no forecaster predicted both treatments of the pair")
        diff = (self._x[k] - self._x[l]) * both
        m = self.m * both
        per_draw = (m @ diff) / m.sum(axis=1)
        return per_draw - (self.mu[:, k] - self.mu[:, l])

    def forecaster_risk(self, loss: LossKind) -> np.ndarray:
        self._check_loss(loss)
        sums, counts = self._loss_cells(loss)
        return self._over_treatments(sums, counts)

    def predictor_risk(self, loss: LossKind, predictions) -> np.ndarray:
        pred = self.model_draws(predictions)
        self._check_loss(loss, pred)
        per = loss(self.mu, pred)
        return np.sum(self.w * per, axis=1) / np.sum(self.w, axis=1)

    def comparative_risk(self, loss: LossKind, predictions) -> np.ndarray:
        pred = self.model_draws(predictions)
        self._check_loss(loss, pred)
        counts = self._counts()
        if np.ndim(predictions) == 1:
            # per-cell coefficient differences: cells equal to the model give exact zeros
            ax, bx, _ = polynomial_coefficients(loss, self._x)
            am, bm, _ = polynomial_coefficients(loss, np.asarray(predictions, float))
            sums = self._fsum(ax - am[:, None]) + self.mu * self._fsum(bx - bm[:, None])
            return self._over_treatments(sums, counts)
        sums, _ = self._loss_cells(loss)
        model = loss(self.mu, pred)
        return self._over_treatments(sums - model * counts, counts)

    def evaluate(self, spec: EstimandSpec, model_predictions=None) -> np.ndarray:
        kind, loss = spec.kind, spec.loss
        tids = self.forecasts.treatment_ids
        if kind is EstimandKind.BIAS_OVERALL:
            return self.bias()
        if kind is EstimandKind.BIAS_PER_TREATMENT:
            k = _index(tids, spec.treatments[0])
            sums, counts = self._bias_cells()
            return sums[:, k] / counts[:, k]
        if kind is EstimandKind.BIAS_DIFFERENCE:
            return self.bias_difference(_index(tids, spec.treatments[0]),
                                        _index(tids, spec.treatments[1]))
        if kind is EstimandKind.BIAS_BY_CATEGORY:
            cats = self.forecasts.treatment_categories
            if not cats:
                raise EstimandError("bias_by_category needs treatment categories")
            signs = np.array([cats[t][1] if t in cats and cats[t][0] == spec.category else 0
                              for t in tids], float)
            if not signs.any():
                raise EstimandError(f"category {spec.category!r} has no treatments")
            return self.signed_bias(signs)
        if kind is EstimandKind.RISK_FORECASTERS:
            return self.forecaster_risk(loss)
        if kind is EstimandKind.RISK_ORACLE:
            return self.predictor_risk(loss, oracle_predictions(self.sampler, loss))
        if model_predictions is None:
            raise EstimandError(f"{spec.label} needs model predictions")
        if kind is EstimandKind.RISK_MODEL:
            return self.predictor_risk(loss, model_predictions)
        return self.comparative_risk(loss, model_predictions)

    def summarize(self, draws, label, loss=None, keep_draws=True) -> EstimateResult:
        return summarize(draws, label, seed=self.seed, loss=loss, keep_draws=keep_draws)


def _index(ids: Sequence, tid) -> int:
    try:
        return list(ids).index(tid)
    except ValueError:
        raise EstimandError(f"unknown treatment {tid!r}") from None


def estimate(forecasts: ForecastMatrix, sampler: PosteriorSampler, spec: EstimandSpec,
             model_predictions=None, samples: int = DEFAULT_SAMPLES, seed: int = 0, *,
             weights: str = "dirichlet") -> EstimateResult:
    """Posterior-and-bootstrap distribution of one estimand.

    ``model_predictions`` is a length-``K`` vector, or a ``(D, K)`` pool of
    draws for a stochastic model. ``weights="uniform"`` replaces the
    Dirichlet weights by equal weights (no bootstrap).
    """
    draws = BootstrapDraws(forecasts, sampler, samples, seed, weights=weights)
    values = draws.evaluate(spec, model_predictions)
    is_loss = spec.kind in (EstimandKind.RISK_FORECASTERS, EstimandKind.RISK_MODEL,
                            EstimandKind.RISK_ORACLE, EstimandKind.COMPARATIVE_RISK)
    return draws.summarize(values, spec.label, loss=spec.loss if is_loss else None)


# --------------------------------------------------------- simultaneous bands

@dataclass(frozen=True)
class SimultaneousBands:
    """Joint summary of ``J`` estimands from shared draws."""

    labels: tuple
    mean: np.ndarray
    marginal_lower: np.ndarray
    marginal_upper: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    adjusted_p: np.ndarray
    level: float = LEVEL

    @property
    def significant(self) -> np.ndarray:
        return (self.lower > 0) | (self.upper < 0)

    def rows(self) -> list[dict]:
        return [
            {"label": lab, "mean": float(m), "ci_lower": float(lo), "ci_upper": float(hi),
             "marginal_lower": float(mlo), "marginal_upper": float(mhi),
             "p_value": float(p), "significant": bool(sig)}
            for lab, m, lo, hi, mlo, mhi, p, sig in zip(
                self.labels, self.mean, self.lower, self.upper, self.marginal_lower,
                self.marginal_upper, self.adjusted_p, self.significant)
        ]


def _scaled_deviation(dev: np.ndarray, below: np.ndarray, above: np.ndarray) -> np.ndarray:
    half = np.where(dev >= 0, above, below)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(dev) / half
    return np.where(dev == 0, 0.0, np.where(half > 0, out, np.inf))


def simultaneous_bands(draws: np.ndarray, labels: Sequence | None = None,
                       level: float = LEVEL) -> SimultaneousBands:
    """Max-statistic bands over the columns of ``draws`` (``N x J``).

    Each column's equal-tailed marginal interval is expressed as half-widths
    below and above its mean. Deviations of every draw are scaled by those
    half-widths, and the ``level`` quantile of the per-draw maximum (never
    below one) inflates all marginal intervals at once. Adjusted p-values
    are the share of draws whose maximum scaled deviation reaches the scaled
    distance from the mean to zero.
    """
    draws = np.asarray(draws, float)
    if draws.ndim != 2:
        raise ValueError("draws must be a 2-D array (draws x estimands)")
    J = draws.shape[1]
    labels = tuple(range(J)) if labels is None else tuple(labels)
    tail = (1.0 - level) / 2.0
    mean = draws.mean(axis=0)
    q_lo, q_hi = np.quantile(draws, [tail, 1.0 - tail], axis=0)
    below = np.clip(mean - q_lo, 0.0, None)
    above = np.clip(q_hi - mean, 0.0, None)
    max_stat = _scaled_deviation(draws - mean, below, above).max(axis=1)
    crit = max(1.0, float(np.quantile(max_stat, level)))
    zero_dist = _scaled_deviation(np.zeros(J) - mean, below, above)
    adjusted = (max_stat[:, None] >= zero_dist[None, :]).mean(axis=0)
    return SimultaneousBands(
        labels=labels, mean=mean, marginal_lower=mean - below, marginal_upper=mean + above,
        lower=mean - crit * below, upper=mean + crit * above, critical_value=crit,
        adjusted_p=adjusted, level=level,
    )


def per_treatment_bias_simultaneous(forecasts: ForecastMatrix, sampler: PosteriorSampler,
                                    samples: int = DEFAULT_SAMPLES, seed: int = 0,
                                    level: float = LEVEL) -> SimultaneousBands:
    """Per-treatment bias with bands holding jointly across all treatments."""
    if forecasts.K < 2:
        raise EstimandError("simultaneous inference needs at least two treatments")
    draws = BootstrapDraws(forecasts, sampler, samples, seed)
    return simultaneous_bands(draws.bias_by_treatment(), forecasts.treatment_ids, level)


@dataclass(frozen=True)
class SubgroupBias:
    groups: tuple
    estimates: dict
    bands: SimultaneousBands

    def pair(self, a, b) -> dict:
        label = f"{a}-{b}"
        return self.bands.rows()[list(self.bands.labels).index(label)]


def subgroup_bias(forecasts: ForecastMatrix, sampler: PosteriorSampler,
                  samples: int = DEFAULT_SAMPLES, seed: int = 0,
                  level: float = LEVEL) -> SubgroupBias:
    """Bias of each forecaster group and all pairwise gaps, adjusted jointly.

    Forecaster weights are a single ``Dir(1_F)`` draw renormalised within
    each group, which is itself ``Dir(1)`` over that group's members.
    """
    labels, member = forecasts.group_indicator()
    if len(labels) < 2:
        raise EstimandError("subgroup comparison needs at least two forecaster groups")
    draws = BootstrapDraws(forecasts, sampler, samples, seed)
    per_group = []
    for g, label in enumerate(labels):
        if not (forecasts.observed[:, member[g]]).any():
            raise EstimandError(f"group {label!r} has no observed predictions")
        per_group.append(draws.bias(members=member[g].astype(float)))
    cols = list(per_group)
    names = [str(g) for g in labels]
    for i, j in itertools.combinations(range(len(labels)), 2):
        cols.append(per_group[i] - per_group[j])
        names.append(f"{labels[i]}-{labels[j]}")
    matrix = np.column_stack(cols)
    bands = simultaneous_bands(matrix, names, level)
    results = {g: draws.summarize(per_group[i], f"bias:group={g}", keep_draws=False)
               for i, g in enumerate(labels)}
    return SubgroupBias(tuple(labels), results, bands)


@dataclass(frozen=True)
class CategoryBias:
    categories: tuple
    estimates: dict
    overall: EstimateResult
    bands: SimultaneousBands


def framing_pairs_from_categories(categories: Mapping, framing: Sequence[str]) -> dict:
    """``{category: (k, l)}`` for framing categories declared in a categories table.

    A framing category must hold exactly one treatment with sign +1 (the
    loss-framed ``k``) and one with sign -1 (the gain-framed ``l``).
    """
    pairs = {}
    for cat in framing:
        pos = [t for t, (c, s) in categories.items() if c == cat and s == 1]
        neg = [t for t, (c, s) in categories.items() if c == cat and s == -1]
        if len(pos) != 1 or len(neg) != 1:
            raise EstimandError(
                f"framing category {cat!r} must contain one +1 and one -1 treatment; "
                f"found {len(pos)} and {len(neg)}")
        pairs[cat] = (pos[0], neg[0])
    return pairs


def category_bias(forecasts: ForecastMatrix, sampler: PosteriorSampler,
                  samples: int = DEFAULT_SAMPLES, seed: int = 0, *,
                  framing: Sequence[str] = (), level: float = LEVEL) -> CategoryBias:
    """Reverse-coded bias per treatment category.

    Categories listed in ``framing`` are measured as the paired difference
    ``(X_k - X_l) - (mu_k - mu_l)`` instead. ``overall`` pools every
    sign-coded (non-framing) treatment.
    """
    cats = forecasts.treatment_categories
    if not cats:
        raise EstimandError("category bias needs treatment categories")
    pairs = framing_pairs_from_categories(cats, framing)
    draws = BootstrapDraws(forecasts, sampler, samples, seed)
    tids = forecasts.treatment_ids
    labels = sorted({c for c, _ in cats.values()}, key=str)
    cols, results = [], {}
    pooled = np.zeros(forecasts.K)
    for cat in labels:
        if cat in pairs:
            k, l = pairs[cat]
            col = draws.bias_difference(_index(tids, k), _index(tids, l))
        else:
            signs = np.array([cats[t][1] if t in cats and cats[t][0] == cat else 0
                              for t in tids], float)
            pooled += signs
            col = draws.signed_bias(signs)
        cols.append(col)
        results[cat] = draws.summarize(col, f"bias:category={cat}", keep_draws=False)
    if pooled.any():
        overall = draws.summarize(draws.signed_bias(pooled), "bias:categories", keep_draws=False)
    else:
        overall = draws.summarize(np.column_stack(cols).mean(axis=1), "bias:categories",
                                  keep_draws=False)
    bands = simultaneous_bands(np.column_stack(cols), labels, level)
    return CategoryBias(tuple(labels), results, overall, bands)
