"""Empirical Bayes posteriors for true effects given noisy estimates.

Two priors are supported:

``fit_parametric_eb``
    ``mu ~ N(m 1, tau2 I)`` with ``(m, tau2)`` chosen by maximum marginal
    likelihood. Works with any (correlated) sampling covariance.
``fit_nonparametric_eb``
    Kiefer-Wolfowitz NPMLE of the prior on a fixed grid, fitted by an
    accelerated EM. Needs independent estimates (diagonal covariance).

Either fit turns into a :class:`PosteriorSampler`, which draws ``mu | Y`` and
knows the exact posterior mean (the oracle predictor).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp
from scipy.stats import norm

from .data_model import EffectEstimates, critical_value
from .losses import LossKind, check_probabilities

GRID_SIZE = 300
GRID_WIDTH_SDS = 3.0
NPMLE_TOL = 1e-9
NPMLE_MAX_ITER = 200_000
GOLDEN_MAX_ITER = 500
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class EBFitError(ValueError):
    """The data cannot be fitted by the requested estimator."""


class EBConvergenceError(RuntimeError):
    """The optimiser hit its iteration cap; ``last_iterate`` holds where it stopped."""

    def __init__(self, message: str, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


# ----------------------------------------------------------------- parametric

@dataclass(frozen=True)
class ParametricEBFit:
    prior_mean: float
    prior_variance: float
    posterior_mean: np.ndarray
    posterior_covariance: np.ndarray
    log_likelihood: float
    iterations: int = 0

    @property
    def K(self) -> int:
        return len(self.posterior_mean)


def _chol(mat: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_factor(mat, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.max(np.diag(mat))))
        return linalg.cho_factor(mat + jitter * np.eye(len(mat)), lower=True)


def marginal_log_likelihood(y: np.ndarray, cov: np.ndarray, prior_mean: float,
                            prior_variance: float) -> float:
    """Log density of ``Y ~ N(m 1, Sigma + tau2 I)``."""
    v = cov + prior_variance * np.eye(len(y))
    c = _chol(v)
    r = y - prior_mean
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    quad = float(r @ linalg.cho_solve(c, r))
    return -0.5 * (len(y) * math.log(2.0 * math.pi) + logdet + quad)


def _profile(y: np.ndarray, cov: np.ndarray, tau2: float) -> tuple[float, float]:
    """Prior mean maximising the likelihood at ``tau2`` and the resulting log-likelihood."""
    v = cov + tau2 * np.eye(len(y))
    c = _chol(v)
    vinv_one = linalg.cho_solve(c, np.ones(len(y)))
    m = float(vinv_one @ y / vinv_one.sum())
    r = y - m
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    quad = float(r @ linalg.cho_solve(c, r))
    return m, -0.5 * (len(y) * math.log(2.0 * math.pi) + logdet + quad)


def _golden_max(fun, lo: float, hi: float, xtol: float, max_iter: int):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    for it in range(1, max_iter + 1):
        if b - a <= xtol:
            x = 0.5 * (a + b)
            return x, it
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    raise EBConvergenceError(
        f"golden-section search did not converge in {max_iter} iterations",
        last_iterate=0.5 * (a + b),
    )


def parametric_posterior(data: EffectEstimates, prior_mean: float,
                         prior_variance: float) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate normal posterior mean and covariance for a fixed prior."""
    y, cov = data.estimates, data.covariance
    K = len(y)
    if prior_variance < 0:
        raise ValueError("prior variance must be non-negative")
    if prior_variance == 0.0:
        return np.full(K, float(prior_mean)), np.zeros((K, K))
    c = _chol(cov + prior_variance * np.eye(K))
    mean = y - cov @ linalg.cho_solve(c, y - prior_mean)
    post = cov - cov @ linalg.cho_solve(c, cov)
    post = 0.5 * (post + post.T)
    return mean, post


def fit_parametric_eb(data: EffectEstimates, *, xtol: float = 1e-12,
                      max_iter: int = GOLDEN_MAX_ITER) -> ParametricEBFit:
    """Normal-normal empirical Bayes with exchangeable prior ``N(m 1, tau2 I)``.

    ``m`` is profiled out in closed form (a GLS mean); ``tau2`` maximises the
    profile likelihood by a coarse log-grid scan followed by golden-section
    refinement. The boundary ``tau2 = 0`` is always a candidate.
    """
    if data.K < 2:
        raise EBFitError("parametric empirical Bayes needs at least two estimates")
    y, cov = data.estimates, data.covariance

    spread = float(np.ptp(y)) ** 2 + float(np.var(y))
    upper = 10.0 * (spread + float(np.max(np.diag(cov)))) + 1e-12
    prof = lambda t: _profile(y, cov, t)[1]  # noqa: E731

    candidates = np.concatenate([[0.0], upper * np.logspace(-10, 0, 61)])
    values = np.array([prof(t) for t in candidates])
    best = int(np.argmax(values))
    tau2 = float(candidates[best])
    iterations = len(candidates)
    if best > 0:
        lo = candidates[best - 1]
        hi = candidates[min(best + 1, len(candidates) - 1)]
        t_star, its = _golden_max(prof, lo, hi, xtol=xtol * max(upper, 1.0), max_iter=max_iter)
        iterations += its
        if prof(t_star) >= values[best]:
            tau2 = t_star
    if prof(0.0) >= prof(tau2):
        tau2 = 0.0
    m, ll = _profile(y, cov, tau2)
    mean, post = parametric_posterior(data, m, tau2)
    return ParametricEBFit(m, tau2, mean, post, ll, iterations)


# -------------------------------------------------------------- nonparametric

@dataclass(frozen=True)
class NonparametricEBFit:
    grid: np.ndarray
    prior_weights: np.ndarray
    posterior_weights: np.ndarray
    log_likelihood: float
    iterations: int
    optimality_gap: float
    log_likelihood_trace: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return self.posterior_weights.shape[0]

    @property
    def posterior_mean(self) -> np.ndarray:
        return self.posterior_weights @ self.grid


def default_grid(y: np.ndarray, sd: np.ndarray, size: int = GRID_SIZE) -> np.ndarray:
    width = GRID_WIDTH_SDS * float(np.max(sd))
    return np.linspace(float(np.min(y)) - width, float(np.max(y)) + width, size)


def _log_lik_matrix(y: np.ndarray, sd: np.ndarray, grid: np.ndarray) -> np.ndarray:
    z = (y[:, None] - grid[None, :]) / sd[:, None]
    return norm.logpdf(z) - np.log(sd)[:, None]


def npmle_em(loglik: np.ndarray, *, tol: float = NPMLE_TOL, max_iter: int = NPMLE_MAX_ITER,
             weights: np.ndarray | None = None):
    """Maximise ``sum_k log sum_g w_g exp(loglik[k, g])`` over the simplex.

    EM steps, wrapped in SQUAREM extrapolation, run until the relative change
    in log-likelihood drops below ``tol``. EM crawls near the optimum when the
    likelihood is sharply peaked, so the fit is then finished with constrained
    Newton steps on the support (Wang 2007). Every accepted step raises the
    likelihood, so the trace is monotone. The run stops once the certified
    optimality gap ``max_g sum_k L_kg / f_k - K`` is below ``tol * |loglik|``.

    Returns ``(weights, loglik, trace, gap)``.
    """
    K, G = loglik.shape
    shift = loglik.max(axis=1, keepdims=True)
    lik = np.exp(loglik - shift)
    offset = float(shift.sum())

    def ll(w):
        return float(np.sum(np.log(lik @ w))) + offset

    def gradient(w):
        return (lik / (lik @ w)[:, None]).sum(axis=0)

    def em(w):
        w = w * gradient(w) / K
        return w / w.sum()

    def certified(grad, cur):
        gap = float(grad.max()) - K
        return gap, gap <= tol * max(1.0, abs(cur))

    w = np.full(G, 1.0 / G) if weights is None else np.asarray(weights, float).copy()
    cur = ll(w)
    trace = [cur]
    it = 0
    while it < max_iter:
        it += 1
        gap, done = certified(gradient(w), cur)
        if done:
            return w, cur, np.array(trace), gap
        w1 = em(w)
        w2 = em(w1)
        r = w1 - w
        v = w2 - w1 - r
        step = -float(np.linalg.norm(r)) / max(float(np.linalg.norm(v)), 1e-300)
        cand, cand_ll = w2, ll(w2)
        if step < -1.0:
            ext = np.maximum(w - 2.0 * step * r + step * step * v, 0.0)
            if ext.sum() > 0:
                ext = em(ext / ext.sum())
                ext_ll = ll(ext)
                if ext_ll >= cand_ll:
                    cand, cand_ll = ext, ext_ll
        if cand_ll < cur:
            break
        change = cand_ll - cur
        w, cur = cand, cand_ll
        trace.append(cur)
        if change <= tol * max(1.0, abs(cur)):
            break

    while it < max_iter:
        it += 1
        grad = gradient(w)
        gap, done = certified(grad, cur)
        if done:
            return w, cur, np.array(trace), gap
        nxt = _cnm_step(lik, w, grad, K)
        if nxt is None:
            return w, cur, np.array(trace), gap
        direction = nxt - w
        slope = float(grad @ direction)
        alpha = 1.0
        while alpha > 1e-10:
            cand = w + alpha * direction
            cand_ll = ll(cand)
            if cand_ll >= cur + alpha * slope / 3.0:
                break
            alpha *= 0.5
        else:
            # no ascent left at working precision
            return w, cur, np.array(trace), gap
        w, cur = np.clip(cand, 0.0, None), cand_ll
        w /= w.sum()
        trace.append(cur)
    raise EBConvergenceError(f"NPMLE did not converge in {max_iter} iterations",
                             last_iterate=w)


def _cnm_step(lik, w, grad, K):
    """Target weights from the quadratic model of the log-likelihood.

    The support is the current one plus local maxima of the gradient that
    would raise the likelihood; the simplex constraint enters as a heavily
    weighted extra least-squares row.
    """
    d = np.concatenate([[-np.inf], grad, [-np.inf]])
    peaks = (grad > K) & (grad >= d[:-2]) & (grad >= d[2:])
    idx = np.flatnonzero((w > 0) | peaks)
    f = lik @ w
    a = lik[:, idx] / f[:, None]
    scale = 1e3 * math.sqrt(K)
    design = np.vstack([a, np.full((1, len(idx)), scale)])
    target = np.concatenate([np.full(K, 2.0), [scale]])
    sol, _ = optimize.nnls(design, target, maxiter=50 * len(idx))
    if sol.sum() <= 0:
        return None
    out = np.zeros_like(w)
    out[idx] = sol / sol.sum()
    return out


def fit_nonparametric_eb(data: EffectEstimates, *, grid: np.ndarray | None = None,
                         grid_size: int = GRID_SIZE, tol: float = NPMLE_TOL,
                         max_iter: int = NPMLE_MAX_ITER) -> NonparametricEBFit:
    """Grid NPMLE of the prior for independent normal estimates."""
    if not data.is_diagonal:
        raise EBFitError(
            "nonparametric empirical Bayes assumes independent estimates; "
            "the covariance has off-diagonal terms, use fit_parametric_eb instead"
        )
    sd = data.std_errors
    if np.any(sd <= 0):
        raise EBFitError("nonparametric empirical Bayes needs strictly positive variances")
    if data.K < 10:
        warnings.warn(f"NPMLE with only {data.K} estimates is poorly determined",
                      stacklevel=2)
    y = data.estimates
    grid = default_grid(y, sd, grid_size) if grid is None else np.asarray(grid, float)
    logL = _log_lik_matrix(y, sd, grid)
    w, ll, trace, gap = npmle_em(logL, tol=tol, max_iter=max_iter)
    with np.errstate(divide="ignore"):
        logpost = logL + np.log(w)[None, :]
    post = np.exp(logpost - logsumexp(logpost, axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    return NonparametricEBFit(grid, w, post, ll, len(trace) - 1, gap, trace)


# ------------------------------------------------------------------- sampling

@dataclass(frozen=True)
class ReplicationLink:
    """Maps normalised effects to replication probabilities ``Phi(sqrt(n) mu* - c)``."""

    n: np.ndarray
    alpha: np.ndarray

    def apply(self, mu_star):
        root_n = np.sqrt(np.asarray(self.n, float))
        return norm.cdf(root_n * mu_star - critical_value(self.alpha))


class PosteriorSampler:
    """Seeded sampler for ``mu | Y``.

    ``sample(count)`` restarts from ``seed`` on every call, so repeated calls
    return identical draws; pass ``rng`` to draw from a caller-owned stream.
    When ``link`` is set, draws and means are on the linked scale.
    """

    def __init__(self, kind: str, dimension: int, *, seed=0, mean=None, covariance=None,
                 grid=None, weights=None, link: ReplicationLink | None = None):
        self.kind = kind
        self.dimension = int(dimension)
        self.seed = seed
        self.link = link
        if kind == "parametric":
            self._mean = np.asarray(mean, float)
            cov = np.asarray(covariance, float)
            self._cov = cov
            if np.any(cov):
                vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
                self._factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
            else:
                self._factor = None
        elif kind == "nonparametric":
            self._grid = np.asarray(grid, float)
            self._weights = np.asarray(weights, float)
            cdf = np.cumsum(self._weights, axis=1)
            self._cdf = cdf / cdf[:, -1:]
        else:
            raise ValueError(f"unknown sampler kind {kind!r}")

    @classmethod
    def from_fit(cls, fit, *, seed=0, link: ReplicationLink | None = None) -> "PosteriorSampler":
        if isinstance(fit, ParametricEBFit):
            return cls("parametric", fit.K, seed=seed, mean=fit.posterior_mean,
                       covariance=fit.posterior_covariance, link=link)
        if isinstance(fit, NonparametricEBFit):
            return cls("nonparametric", fit.K, seed=seed, grid=fit.grid,
                       weights=fit.posterior_weights, link=link)
        raise TypeError(f"cannot build a sampler from {type(fit).__name__}")

    @classmethod
    def point_mass(cls, values, *, seed=0) -> "PosteriorSampler":
        """Degenerate posterior: every draw equals ``values``."""
        values = np.asarray(values, float).reshape(-1)
        return cls("parametric", len(values), seed=seed, mean=values,
                   covariance=np.zeros((len(values), len(values))))

    @property
    def is_degenerate(self) -> bool:
        if self.kind == "parametric":
            return self._factor is None
        return bool(np.all(self._weights.max(axis=1) == 1.0))

    def sample(self, count: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be positive")
        rng = np.random.default_rng(self.seed) if rng is None else rng
        K = self.dimension
        if self.kind == "parametric":
            if self._factor is None:
                draws = np.broadcast_to(self._mean, (count, K)).copy()
            else:
                z = rng.standard_normal((count, K))
                draws = self._mean + z @ self._factor.T
        else:
            u = rng.random((count, K))
            idx = np.empty((count, K), dtype=np.intp)
            last = self._cdf.shape[1] - 1
            for k in range(K):
                idx[:, k] = np.minimum(np.searchsorted(self._cdf[k], u[:, k], side="right"),
                                       last)
            draws = self._grid[idx]
        if self.link is not None:
            draws = self.link.apply(draws)
        return draws

    def posterior_mean(self) -> np.ndarray:
        """Exact posterior mean on the (linked) scale."""
        if self.kind == "parametric":
            if self.link is None:
                return self._mean.copy()
            a = np.sqrt(np.asarray(self.link.n, float))
            var = np.diag(self._cov)
            return norm.cdf((a * self._mean - critical_value(self.link.alpha))
                            / np.sqrt(1.0 + a * a * var))
        if self.link is None:
            return self._weights @ self._grid
        root_n = np.sqrt(np.asarray(self.link.n, float))[:, None]
        c = np.broadcast_to(critical_value(self.link.alpha), (self.dimension,))[:, None]
        vals = norm.cdf(root_n * self._grid[None, :] - c)
        return np.sum(self._weights * vals, axis=1)

    def posterior_variance(self) -> np.ndarray:
        if self.link is not None:
            raise NotImplementedError("posterior variance is only tracked on the effect scale")
        if self.kind == "parametric":
            return np.diag(self._cov).copy()
        mean = self._weights @ self._grid
        return self._weights @ self._grid**2 - mean**2

    def shifted(self, c: float) -> "PosteriorSampler":
        """The same posterior translated by ``c`` (same seed, same noise)."""
        if self.link is not None:
            raise ValueError("cannot shift a linked sampler")
        if self.kind == "parametric":
            return PosteriorSampler("parametric", self.dimension, seed=self.seed,
                                    mean=self._mean + c, covariance=self._cov)
        return PosteriorSampler("nonparametric", self.dimension, seed=self.seed,
                                grid=self._grid + c, weights=self._weights)


def sample_posterior(sampler: PosteriorSampler, count: int,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """``count x K`` draws of ``mu`` from the posterior."""
    return sampler.sample(count, rng)


def oracle_predictions(sampler: PosteriorSampler, kind: LossKind | str = LossKind.SQUARED_ERROR):
    """Bayes-optimal prediction vector: the posterior mean.

    The posterior mean minimises posterior expected squared error, and since
    the expected Brier score is ``mu (1 - mu) + (mu - p)**2`` it is optimal
    there too.
    """
    kind = LossKind.parse(kind)
    pred = sampler.posterior_mean()
    if kind.requires_probabilities:
        check_probabilities(pred, "oracle predictions")
    return pred


def fit_posterior(data: EffectEstimates, kind: str = "auto", *, seed=0,
                  link: ReplicationLink | None = None):
    """Fit the requested estimator and wrap it in a sampler.

    ``auto`` picks the NPMLE for independent estimates with ``K >= 30`` and
    the parametric prior otherwise. Returns ``(fit, sampler)``.
    """
    kind = resolve_eb_kind(data, kind)
    fit = fit_parametric_eb(data) if kind == "parametric" else fit_nonparametric_eb(data)
    return fit, PosteriorSampler.from_fit(fit, seed=seed, link=link)


def resolve_eb_kind(data: EffectEstimates, kind: str) -> str:
    if kind == "auto":
        return "nonparametric" if data.is_diagonal and data.K >= 30 else "parametric"
    if kind not in ("parametric", "nonparametric"):
        raise ValueError(f"unknown empirical Bayes kind {kind!r}")
    return kind
