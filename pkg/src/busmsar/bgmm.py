"""Time-dependent Bayesian Gaussian mixture baseline.

Runs are exchangeable within a time period: each run picks a component from
its period's mixing weights and is drawn from that component's Gaussian, with
no dependence on the preceding bus. Components are shared across periods.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from . import distributions as dist
from .errors import InputError, NonFiniteLikelihood
from .inference import _seed_of, sample_niw_posterior
from .model import DaySequence, Hyperparams

log = logging.getLogger(__name__)


@dataclass
class BgmmParams:
    """Per-period weights ``(T, K)`` and shared component means and covariances."""

    weights: NDArray
    mu: NDArray
    sigma: NDArray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def T(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def copy(self) -> "BgmmParams":
        return BgmmParams(self.weights.copy(), self.mu.copy(), self.sigma.copy())

    def relabel(self, perm) -> "BgmmParams":
        """New component ``i`` is old component ``perm[i]``."""
        perm = np.asarray(perm)
        return BgmmParams(self.weights[:, perm], self.mu[perm], self.sigma[perm])


def component_log_density(Y: NDArray, params: BgmmParams) -> NDArray:
    """``log N(y_i | mu_k, Sigma_k)`` as a (runs x components) array."""
    out = np.empty((len(Y), params.K))
    for k in range(params.K):
        out[:, k] = np.atleast_1d(dist.mvn_logpdf(Y, params.mu[k], params.sigma[k]))
    return out


def _labels_from_uniforms(logp: NDArray, u: NDArray) -> NDArray:
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    c = np.cumsum(p, axis=1)
    z = (c < (u * c[:, -1])[:, None]).sum(axis=1)
    return np.minimum(z, logp.shape[1] - 1)


def bgmm_gibbs_fit(
    days: list[DaySequence],
    hyper: Hyperparams,
    K: int,
    n_burn: int = 500,
    n_keep: int = 200,
    seed=0,
    thin: int = 1,
    n_periods: int | None = None,
    log_every: int = 100,
    trace: list | None = None,
) -> list[BgmmParams]:
    """Gibbs sampler for the mixture baseline.

    Period labels come from ``day.periods`` (period 0 when absent). Each sweep
    updates every component's mean and covariance from the runs assigned to
    it, then each period's weights, then all run labels. Label draws use one
    stream per iteration keyed by ``(seed, iteration)``.
    """
    if K < 1 or n_keep < 1 or n_burn < 0 or thin < 1:
        raise InputError("need K >= 1, n_keep >= 1, n_burn >= 0, thin >= 1")
    if not days:
        raise InputError("empty dataset")
    hyper.validate(K)
    Y = np.concatenate([day.runs for day in days])
    if Y.shape[1] != hyper.dim:
        raise InputError(f"hyperparameters are for dim {hyper.dim}, data has dim {Y.shape[1]}")
    t = np.concatenate([day.periods if day.periods is not None else np.zeros(len(day), int) for day in days])
    if t.min() < 0:
        raise InputError("period labels must be non-negative")
    T = int(t.max()) + 1 if n_periods is None else int(n_periods)
    if t.max() >= T:
        raise InputError(f"period label {t.max()} outside 0..{T - 1}")
    seed = _seed_of(seed)
    chain = np.random.default_rng(np.random.SeedSequence([seed]))
    z = np.random.default_rng(np.random.SeedSequence([seed, 2**32])).integers(K, size=len(Y))
    d = Y.shape[1]
    params = BgmmParams(np.full((T, K), 1.0 / K), np.zeros((K, d)), np.repeat(np.eye(d)[None], K, axis=0))
    draws = []
    total = n_burn + n_keep * thin
    for it in range(total):
        for k in range(K):
            params.mu[k], params.sigma[k] = sample_niw_posterior(Y[z == k], hyper, chain)
        counts = np.zeros((T, K))
        np.add.at(counts, (t, z), 1)
        params.weights = np.array([dist.sample_dirichlet(counts[p] + hyper.alpha, chain) for p in range(T)])
        logp = component_log_density(Y, params) + np.log(params.weights[t])
        loglik = float(logsumexp(logp, axis=1).sum())
        if not np.isfinite(loglik):
            raise NonFiniteLikelihood(it)
        u = np.random.default_rng(np.random.SeedSequence([seed, it])).random(len(Y))
        z = _labels_from_uniforms(logp, u)
        if trace is not None:
            trace.append(loglik)
        if log_every and (it + 1) % log_every == 0:
            log.info("iteration %d/%d  log-likelihood %.4f", it + 1, total, loglik)
        if it >= n_burn and (it - n_burn + 1) % thin == 0:
            draws.append(params.copy())
    return draws


def bgmm_conditional_forecast(values, mask, period: int, draws: list[BgmmParams], seed=0) -> NDArray:
    """Forecast samples (draws x unobserved entries) for one partially observed run.

    Per draw the component is sampled from its posterior given the observed
    entries (prior weights of ``period`` when nothing is observed), then the
    free entries from that component's conditional Gaussian. Draw ``r`` uses
    an rng stream keyed by ``(seed, r)``.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    obs, free = np.flatnonzero(mask), np.flatnonzero(~mask)
    out = np.empty((len(draws), free.size))
    if free.size == 0:
        return out
    for r, p in enumerate(draws):
        rng = np.random.default_rng(np.random.SeedSequence([_seed_of(seed), r]))
        logw = np.log(p.weights[period])
        if obs.size:
            logw = logw + np.array([dist.mvn_logpdf(values[obs], p.mu[k][obs], p.sigma[k][np.ix_(obs, obs)])
                                    for k in range(p.K)])
        w = np.exp(logw - logw.max())
        k = dist.sample_categorical(w / w.sum(), rng)
        m, C = dist.gaussian_condition(p.mu[k], p.sigma[k], obs, values[obs])
        out[r] = dist.sample_mvn(m, C, rng)
    return out


def mixture_conditional_density(x, free_index: int, values, mask, period: int, params: BgmmParams) -> NDArray:
    """Exact predictive density of one free entry under a single parameter set."""
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    obs = np.flatnonzero(mask)
    logw = np.log(params.weights[period])
    if obs.size:
        logw = logw + np.array([dist.mvn_logpdf(values[obs], params.mu[k][obs],
                                                params.sigma[k][np.ix_(obs, obs)]) for k in range(params.K)])
    w = np.exp(logw - logsumexp(logw))
    free = np.flatnonzero(~mask)
    col = int(np.flatnonzero(free == free_index)[0])
    x = np.asarray(x, dtype=float)
    dens = np.zeros_like(x)
    for k in range(params.K):
        m, C = dist.gaussian_condition(params.mu[k], params.sigma[k], obs, values[obs])
        s = np.sqrt(C[col, col])
        dens += w[k] * np.exp(-0.5 * ((x - m[col]) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    return dens
