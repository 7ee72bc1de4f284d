"""Gibbs sampler for the regime-switching VAR.

One sweep updates, in order: each regime's ``(mu, Sigma)`` then ``A`` given
the current states, every transition row, and finally each day's state
sequence by forward filtering / backward sampling. Hyperparameters stay fixed.

The first run of a day has no modelled predecessor, so it contributes no
emission term and belongs to no regime's data set; it still carries a state
that enters the transition counts.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import linear_sum_assignment

from . import distributions as dist
from .errors import InputError, NonFiniteLikelihood, NumericalUnderflow
from .model import DaySequence, Hyperparams, RegimeParams, stationary_distribution

log = logging.getLogger(__name__)


@dataclass
class PosteriorDraw:
    regime: RegimeParams
    states: list[NDArray] | None = None


@dataclass
class ForwardResult:
    """Normalized forward messages and per-step log normalizers.

    ``messages[i]`` is ``p(z_i | y_1..y_i)``; ``log_normalizers.sum()`` is the
    log-likelihood of the emissions that were scored.
    """

    messages: NDArray
    log_normalizers: NDArray
    log_emissions: NDArray

    @property
    def loglik(self) -> float:
        return float(self.log_normalizers.sum())


# --- forward / backward ---------------------------------------------------------------

def regime_cholesky(regime: RegimeParams) -> list[NDArray]:
    return [dist.cholesky(regime.sigma[k]) for k in range(regime.K)]


def pair_log_emissions(prev: NDArray, cur: NDArray, regime: RegimeParams, chols=None) -> NDArray:
    """``log N(cur_i | A_k prev_i + mu_k, Sigma_k)`` for every pair ``i`` and state ``k``."""
    chols = regime_cholesky(regime) if chols is None else chols
    out = np.empty((len(cur), regime.K))
    for k in range(regime.K):
        mean = prev @ regime.A[k].T + regime.mu[k]
        out[:, k] = np.atleast_1d(dist.mvn_logpdf_chol(cur, mean, chols[k]))
    return out


def day_log_emissions(runs: NDArray, regime: RegimeParams, chols=None) -> NDArray:
    """Emission log densities for one day; row 0 is zero (first run is not scored)."""
    out = np.zeros((len(runs), regime.K))
    if len(runs) > 1:
        out[1:] = pair_log_emissions(runs[:-1], runs[1:], regime, chols)
    return out


def forward_filter(log_em: NDArray, pi: NDArray, init: NDArray) -> ForwardResult:
    """Scaled forward recursion over a matrix of log emissions (runs x states)."""
    I, K = log_em.shape
    alpha = np.empty((I, K))
    log_c = np.empty(I)
    pred = np.asarray(init, dtype=float)
    for i in range(I):
        if i > 0:
            pred = alpha[i - 1] @ pi
        row = log_em[i]
        shift = np.max(row)
        if not np.isfinite(shift):
            raise NumericalUnderflow(f"no state can explain run {i}")
        a = pred * np.exp(row - shift)
        c = a.sum()
        if not c > 0 or not np.isfinite(c):
            raise NumericalUnderflow(f"forward message vanished at run {i}")
        alpha[i] = a / c
        log_c[i] = np.log(c) + shift
    return ForwardResult(messages=alpha, log_normalizers=log_c, log_emissions=log_em)


def backward_messages(fwd: ForwardResult, pi: NDArray) -> NDArray:
    """Scaled backward messages; each row is renormalized to sum to one."""
    log_em = fwd.log_emissions
    I, K = log_em.shape
    beta = np.ones((I, K))
    beta[-1] /= K
    for i in range(I - 2, -1, -1):
        row = log_em[i + 1]
        b = pi @ (np.exp(row - np.max(row)) * beta[i + 1])
        s = b.sum()
        if not s > 0:
            raise NumericalUnderflow(f"backward message vanished at run {i}")
        beta[i] = b / s
    return beta


def backward_sample_from(fwd: ForwardResult, pi: NDArray, rng: np.random.Generator) -> NDArray:
    alpha = fwd.messages
    I = len(alpha)
    z = np.empty(I, dtype=int)
    z[-1] = dist.sample_categorical(alpha[-1], rng)
    for i in range(I - 2, -1, -1):
        w = alpha[i] * pi[:, z[i + 1]]
        z[i] = dist.sample_categorical(w / w.sum(), rng)
    return z


def forward_filter_batch(log_em: NDArray, lengths: NDArray, pi: NDArray, init: NDArray):
    """:func:`forward_filter` for many days at once.

    ``log_em`` is (days x max_runs x states), zero-padded past each day's length.
    Returns messages and log normalizers (zero past each day's end).
    """
    D, I, K = log_em.shape
    alpha = np.empty((D, I, K))
    log_c = np.zeros((D, I))
    pred = np.broadcast_to(np.asarray(init, dtype=float), (D, K))
    for i in range(I):
        if i > 0:
            pred = alpha[:, i - 1] @ pi
        row = log_em[:, i]
        shift = row.max(axis=1)
        a = pred * np.exp(row - shift[:, None])
        c = a.sum(axis=1)
        live = i < lengths
        if not (np.all(np.isfinite(shift[live])) and np.all(c[live] > 0) and np.all(np.isfinite(c[live]))):
            raise NumericalUnderflow(f"forward message vanished at run {i}")
        with np.errstate(divide="ignore", invalid="ignore"):
            alpha[:, i] = a / c[:, None]
            log_c[:, i] = np.where(live, np.log(c) + shift, 0.0)
    return alpha, log_c


def backward_sample_batch(alpha: NDArray, lengths: NDArray, pi: NDArray, uniforms: NDArray) -> NDArray:
    """Backward sampling for many days; ``uniforms[d, i]`` drives the draw of run ``i``."""
    D, I, K = alpha.shape
    z = np.zeros((D, I), dtype=int)
    for i in range(I - 1, -1, -1):
        w = alpha[:, i].copy()
        inner = i < lengths - 1
        if i < I - 1 and np.any(inner):
            w[inner] *= pi[:, z[inner, i + 1]].T
        c = np.cumsum(w, axis=1)
        draw = (c < (uniforms[:, i] * c[:, -1])[:, None]).sum(axis=1)
        z[:, i] = np.minimum(draw, K - 1)
    return z


def _runs(day) -> NDArray:
    return day.runs if isinstance(day, DaySequence) else np.atleast_2d(np.asarray(day, float))


def forward_pass(day, regime: RegimeParams, init: NDArray | None = None) -> ForwardResult:
    """Forward messages for one day.

    The first run's message is the initial distribution (stationary
    distribution of ``regime.pi`` unless ``init`` is given), with no emission.
    """
    runs = _runs(day)
    if len(runs) < 2:
        raise InputError("a day needs at least two runs")
    init = stationary_distribution(regime.pi) if init is None else init
    return forward_filter(day_log_emissions(runs, regime), regime.pi, init)


def backward_sample(fwd: ForwardResult, regime: RegimeParams, rng: np.random.Generator) -> NDArray:
    """Joint draw of the day's state sequence from its posterior."""
    return backward_sample_from(fwd, regime.pi, rng)


def smoothed_marginals(day, regime: RegimeParams, init: NDArray | None = None) -> NDArray:
    """``p(z_i | whole day)`` for every run, as rows of a (runs x states) array."""
    fwd = forward_pass(day, regime, init)
    gamma = fwd.messages * backward_messages(fwd, regime.pi)
    return gamma / gamma.sum(axis=1, keepdims=True)


# --- conjugate updates ----------------------------------------------------------------

def transition_counts(states: list[NDArray], K: int) -> NDArray:
    """Counts of within-day consecutive state pairs (no cross-day pairs)."""
    counts = np.zeros((K, K))
    for z in states:
        z = np.asarray(z)
        if len(z) > 1:
            np.add.at(counts, (z[:-1], z[1:]), 1)
    return counts


def sample_transition_rows(states: list[NDArray], alpha, rng: np.random.Generator) -> NDArray:
    alpha = np.asarray(alpha, dtype=float)
    counts = transition_counts(states, alpha.size)
    return np.array([dist.sample_dirichlet(counts[k] + alpha, rng) for k in range(alpha.size)])


def niw_posterior_params(residuals: NDArray, hyper: Hyperparams):
    """Updated ``(mu0, lam0, Psi0, nu0)`` after observing ``residuals`` (rows)."""
    R = np.asarray(residuals, dtype=float).reshape(-1, hyper.dim)
    N = len(R)
    if N == 0:
        return hyper.mu0.copy(), float(hyper.lam0), hyper.Psi0.copy(), float(hyper.nu0)
    delta = R.mean(axis=0)
    C = R - delta
    S = C.T @ C
    lam_n = hyper.lam0 + N
    diff = delta - hyper.mu0
    mu_n = (hyper.lam0 * hyper.mu0 + N * delta) / lam_n
    Psi_n = hyper.Psi0 + S + (hyper.lam0 * N / lam_n) * np.outer(diff, diff)
    return mu_n, lam_n, 0.5 * (Psi_n + Psi_n.T), hyper.nu0 + N


def sample_niw_posterior(residuals: NDArray, hyper: Hyperparams, rng: np.random.Generator):
    """Draw ``Sigma ~ IW(Psi_n, nu_n)`` then ``mu ~ N(mu_n, Sigma / lam_n)``."""
    mu_n, lam_n, Psi_n, nu_n = niw_posterior_params(residuals, hyper)
    sigma = dist.sample_inverse_wishart(Psi_n, nu_n, rng)
    mu = dist.sample_mvn(mu_n, sigma / lam_n, rng)
    return mu, sigma


def coefficient_posterior_params(prev: NDArray, cur: NDArray, mu: NDArray, M0: NDArray, V0: NDArray):
    """Posterior mean and column covariance of ``A`` given pairs ``(cur_i, prev_i)``."""
    d = M0.shape[0]
    X = np.asarray(prev, dtype=float).reshape(-1, d)
    Y = np.asarray(cur, dtype=float).reshape(-1, d)
    Lv = dist.cholesky(V0)
    V0_inv = cho_solve((Lv, True), np.eye(d))
    prec = V0_inv + X.T @ X
    Lp = dist.cholesky(prec)
    rhs = cho_solve((Lv, True), M0.T).T + (Y - mu).T @ X
    M_n = cho_solve((Lp, True), rhs.T).T
    V_n = cho_solve((Lp, True), np.eye(d))
    return M_n, 0.5 * (V_n + V_n.T)


def sample_coefficient_posterior(prev, cur, mu, sigma, M0, V0, rng: np.random.Generator) -> NDArray:
    M_n, V_n = coefficient_posterior_params(prev, cur, mu, M0, V0)
    return dist.sample_matrix_normal(M_n, sigma, V_n, rng)


# --- driver ----------------------------------------------------------------------------

def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def _day_stream(seed: int, iteration: int, day_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, day_index]))


def _sample_params(prev, cur, z_cur, regime: RegimeParams, hyper: Hyperparams, rng) -> RegimeParams:
    K = regime.K
    A, mu, sigma = regime.A.copy(), regime.mu.copy(), regime.sigma.copy()
    for k in range(K):
        sel = z_cur == k
        X, Y = prev[sel], cur[sel]
        mu[k], sigma[k] = sample_niw_posterior(Y - X @ A[k].T, hyper, rng)
        A[k] = sample_coefficient_posterior(X, Y, mu[k], sigma[k], hyper.M0, hyper.V0, rng)
    return RegimeParams(pi=regime.pi, A=A, mu=mu, sigma=sigma)


def gibbs_fit(
    days: list[DaySequence],
    hyper: Hyperparams,
    K: int,
    n_burn: int = 500,
    n_keep: int = 200,
    seed=0,
    thin: int = 1,
    keep_states: bool = False,
    threads: int = 1,
    log_every: int = 100,
    trace: list | None = None,
    init_states: list[NDArray] | None = None,
    n_starts: int = 1,
    start_sweeps: int = 50,
) -> list[PosteriorDraw]:
    """Run one Gibbs chain and return the retained posterior draws.

    Randomness is keyed by ``seed``: parameter updates use one sequential
    stream, and each day's state draw at each iteration uses a stream derived
    from ``(seed, iteration, day)``, so results do not depend on ``threads``
    (which splits the days into chunks filtered concurrently).
    If ``trace`` is a list, the log-likelihood of every iteration is appended.
    ``init_states`` replaces the random initial state sequences.

    With ``n_starts > 1``, that many short chains of ``start_sweeps`` sweeps
    are run first, each from its own random initial states, and the main
    chain starts from the final states of the one with the highest
    log-likelihood. This guards against the sampler settling in a poor mode.
    """
    if K < 1 or n_keep < 1 or n_burn < 0 or thin < 1:
        raise InputError("need K >= 1, n_keep >= 1, n_burn >= 0, thin >= 1")
    if not days:
        raise InputError("empty dataset")
    d = days[0].dim
    if any(day.dim != d for day in days):
        raise InputError("days have inconsistent run-vector lengths")
    if any(len(day) < 2 for day in days):
        raise InputError("every day needs at least two runs")
    if hyper.dim != d:
        raise InputError(f"hyperparameters are for dim {hyper.dim}, data has dim {d}")
    hyper.validate(K)
    seed = _seed_of(seed)
    if n_starts > 1 and init_states is None:
        best = None
        for s in range(n_starts):
            tr: list = []
            start_seed = int(np.random.SeedSequence([seed, 2**32 + 1, s]).generate_state(1)[0])
            short = gibbs_fit(days, hyper, K, n_burn=start_sweeps - 1, n_keep=1, seed=start_seed,
                              keep_states=True, threads=threads, log_every=0, trace=tr)
            if best is None or tr[-1] > best[0]:
                best = (tr[-1], short[-1].states)
        init_states = best[1]

    prev = np.concatenate([day.runs[:-1] for day in days])
    cur = np.concatenate([day.runs[1:] for day in days])
    lengths = np.array([len(day) for day in days])
    n_days, I_max = len(days), lengths.max()
    # flat pair index -> (day, run) slot in the padded layout
    pair_day = np.repeat(np.arange(n_days), lengths - 1)
    pair_run = np.concatenate([np.arange(1, L) for L in lengths])

    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 2**32]))
    states = [init_rng.integers(K, size=len(day)) for day in days]
    if init_states is not None:
        states = [np.asarray(z, dtype=int).copy() for z in init_states]
    chain = np.random.default_rng(np.random.SeedSequence([seed]))
    regime = RegimeParams(
        pi=np.full((K, K), 1.0 / K),
        A=np.repeat(hyper.M0[None], K, axis=0),
        mu=np.repeat(hyper.mu0[None], K, axis=0),
        sigma=np.repeat(hyper.Psi0[None], K, axis=0),
    )
    chunks = np.array_split(np.arange(n_days), max(1, min(threads, n_days)))
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    draws: list[PosteriorDraw] = []
    total = n_burn + n_keep * thin
    try:
        for it in range(total):
            z_cur = np.concatenate([z[1:] for z in states])
            regime = _sample_params(prev, cur, z_cur, regime, hyper, chain)
            regime.pi = sample_transition_rows(states, hyper.alpha, chain)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                init = stationary_distribution(regime.pi)
            log_em = np.zeros((n_days, I_max, K))
            log_em[pair_day, pair_run] = pair_log_emissions(prev, cur, regime)
            uniforms = np.zeros((n_days, I_max))
            for di in range(n_days):
                uniforms[di, :lengths[di]] = _day_stream(seed, it, di).random(lengths[di])

            def update_chunk(idx, regime=regime, log_em=log_em, init=init, uniforms=uniforms):
                alpha, log_c = forward_filter_batch(log_em[idx], lengths[idx], regime.pi, init)
                z = backward_sample_batch(alpha, lengths[idx], regime.pi, uniforms[idx])
                return z, log_c.sum()

            results = list(pool.map(update_chunk, chunks) if pool else map(update_chunk, chunks))
            z_all = np.concatenate([r[0] for r in results])
            states = [z_all[di, :lengths[di]].copy() for di in range(n_days)]
            loglik = float(sum(r[1] for r in results))
            if not np.isfinite(loglik):
                raise NonFiniteLikelihood(it)
            if trace is not None:
                trace.append(loglik)
            if log_every and (it + 1) % log_every == 0:
                log.info("iteration %d/%d  log-likelihood %.4f", it + 1, total, loglik)
            if it >= n_burn and (it - n_burn + 1) % thin == 0:
                draws.append(PosteriorDraw(
                    regime=regime.copy(),
                    states=[z.copy() for z in states] if keep_states else None,
                ))
    finally:
        if pool:
            pool.shutdown()
    return draws


def match_states_to_truth(estimated, truth, K: int) -> NDArray:
    """Label permutation ``perm`` (estimated label ``e`` -> truth label ``perm[e]``)
    maximizing agreement. Exhaustive for ``K <= 8``, assignment solver otherwise.
    """
    est = np.concatenate([np.ravel(z) for z in estimated]) if isinstance(estimated, list) else np.ravel(estimated)
    tru = np.concatenate([np.ravel(z) for z in truth]) if isinstance(truth, list) else np.ravel(truth)
    conf = np.zeros((K, K))
    np.add.at(conf, (est, tru), 1)
    if K <= 8:
        best, best_score = None, -1.0
        rows = np.arange(K)
        for perm in itertools.permutations(range(K)):
            score = conf[rows, perm].sum()
            if score > best_score:
                best, best_score = perm, score
        return np.array(best)
    r, c = linear_sum_assignment(-conf)
    perm = np.empty(K, dtype=int)
    perm[r] = c
    return perm


def align_to_truth(regime: RegimeParams, perm) -> RegimeParams:
    """Relabel ``regime`` so estimated state ``e`` becomes ``perm[e]``."""
    return regime.relabel(np.argsort(perm))


def posterior_mean(draws: list[PosteriorDraw]) -> RegimeParams:
    return RegimeParams(
        pi=np.mean([dr.regime.pi for dr in draws], axis=0),
        A=np.mean([dr.regime.A for dr in draws], axis=0),
        mu=np.mean([dr.regime.mu for dr in draws], axis=0),
        sigma=np.mean([dr.regime.sigma for dr in draws], axis=0),
    )
