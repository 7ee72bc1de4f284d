"""Probabilistic forecasting of partially observed runs.

A day at forecast time is a list of :class:`PartialRun` objects, one per bus
that has departed. Complete runs have every entry observed; buses still on the
route have a prefix of their links (and the matching occupancies) observed,
plus the headway.

For each posterior draw the states of all departed runs are sampled first,
then every partially observed run from the second onwards is filled in
increasing run order. Each fill conditions the joint Gaussian of the run and
its follower on everything observed in both, so a forecast uses the leader's
(possibly forecast) run vector and the follower's partial observation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import distributions as dist
from .errors import EmptyBundle, IndexOutOfRange, InputError, NumericalUnderflow, TargetBeforeSecondRun
from .inference import ForwardResult, PosteriorDraw, backward_sample_from, pair_log_emissions
from .model import RegimeParams, entry_label, stationary_distribution


@dataclass
class PartialRun:
    """Run vector with an observation mask; unobserved values are stored as NaN."""

    values: NDArray
    mask: NDArray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        self.mask = np.asarray(self.mask, dtype=bool).copy()
        if self.values.shape != self.mask.shape or self.values.ndim != 1:
            raise InputError("values and mask must be vectors of equal length")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise InputError("observed entries must be finite")
        self.values[~self.mask] = np.nan

    @classmethod
    def complete(cls, y: ArrayLike) -> "PartialRun":
        y = np.asarray(y, dtype=float)
        return cls(y, np.ones(y.shape, dtype=bool))

    @classmethod
    def from_prefix(cls, y: ArrayLike, observed_links: int, n: int) -> "PartialRun":
        """Observe the first ``observed_links`` link times and occupancies plus the headway."""
        y = np.asarray(y, dtype=float)
        if y.shape != (2 * n + 1,) or not 0 <= observed_links <= n:
            raise IndexOutOfRange(f"prefix {observed_links} invalid for n={n}")
        mask = np.zeros(2 * n + 1, dtype=bool)
        mask[:observed_links] = True
        mask[n:n + observed_links] = True
        mask[2 * n] = True
        return cls(y, mask)

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    @property
    def observed(self) -> NDArray:
        return np.flatnonzero(self.mask)

    @property
    def free(self) -> NDArray:
        return np.flatnonzero(~self.mask)


@dataclass
class ForecastBundle:
    """Forecast samples for the unobserved entries of one target run.

    ``samples[r, c]`` is draw ``r`` of run-vector entry ``entries[c]``.
    Samples are in model units; if ``stats`` is set (an object with ``mean``
    and ``std`` arrays over run-vector entries) :meth:`original` maps them back.
    """

    day_id: str
    run_index: int
    entries: NDArray
    samples: NDArray
    n: int
    observed: PartialRun | None = None
    stats: object | None = field(default=None, repr=False)

    @property
    def labels(self) -> list[str]:
        return [entry_label(int(e), self.n) for e in self.entries]

    def original(self) -> NDArray:
        if self.stats is None:
            return self.samples
        return self.samples * self.stats.std[self.entries] + self.stats.mean[self.entries]

    def observed_original(self) -> NDArray | None:
        if self.observed is None:
            return None
        if self.stats is None:
            return self.observed.values
        return self.observed.values * self.stats.std + self.stats.mean


# --- joint Gaussian of consecutive runs --------------------------------------------------

def pair_joint(y_prev: ArrayLike, z_j: int, z_next: int, regime: RegimeParams):
    """Mean and covariance of ``[y_j; y_{j+1}]`` given the leader ``y_prev`` and both states."""
    y_prev = np.asarray(y_prev, dtype=float)
    A1, mu1, S1 = regime.A[z_j], regime.mu[z_j], regime.sigma[z_j]
    A2, mu2, S2 = regime.A[z_next], regime.mu[z_next], regime.sigma[z_next]
    m1 = A1 @ y_prev + mu1
    m2 = A2 @ m1 + mu2
    C12 = S1 @ A2.T
    L = np.block([[S1, C12], [C12.T, A2 @ S1 @ A2.T + S2]])
    L = 0.5 * (L + L.T)
    dist.cholesky(L)  # surfaces NotPositiveDefinite early
    return np.concatenate([m1, m2]), L


def conditional_moments(y_prev, partial_j: PartialRun, partial_next: PartialRun | None,
                        z_j: int, z_next: int | None, regime: RegimeParams):
    """Conditional mean and covariance of the free entries of run ``j``."""
    d = regime.dim
    free = partial_j.free
    if partial_next is None or z_next is None or not partial_next.mask.any():
        mean = regime.A[z_j] @ np.asarray(y_prev, dtype=float) + regime.mu[z_j]
        obs = partial_j.observed
        m, C = dist.gaussian_condition(mean, regime.sigma[z_j], obs, partial_j.values[obs])
        return m, C
    mean, cov = pair_joint(y_prev, z_j, z_next, regime)
    obs = np.concatenate([partial_j.observed, d + partial_next.observed])
    vals = np.concatenate([partial_j.values[partial_j.mask], partial_next.values[partial_next.mask]])
    m, C = dist.gaussian_condition(mean, cov, obs, vals)
    # free entries of y_j come first in the complement ordering
    k = free.size
    return m[:k], C[:k, :k]


def conditional_forecast_pair(y_prev, partial_j: PartialRun, partial_next: PartialRun | None,
                              z_j: int, z_next: int | None, regime: RegimeParams,
                              rng: np.random.Generator) -> NDArray:
    """One draw of the unobserved entries of run ``j`` (empty if it is complete)."""
    if partial_j.is_complete:
        return np.empty(0)
    m, C = conditional_moments(y_prev, partial_j, partial_next, z_j, z_next, regime)
    return dist.sample_mvn(m, C, rng)


# --- states under partial observation ----------------------------------------------------

def _partial_log_emission(y_prev, run: PartialRun, regime: RegimeParams) -> NDArray:
    out = np.zeros(regime.K)
    obs = run.observed
    if obs.size == 0:
        return out
    x = run.values[obs]
    for k in range(regime.K):
        mean = regime.A[k] @ y_prev + regime.mu[k]
        m, C = dist.gaussian_marginal(mean, regime.sigma[k], obs)
        out[k] = dist.mvn_logpdf(x, m, C)
    return out


def _fill(run: PartialRun, mean: NDArray, cov: NDArray, rng) -> NDArray:
    if run.is_complete:
        return run.values.copy()
    y = run.values.copy()
    obs = run.observed
    m, C = dist.gaussian_condition(mean, cov, obs, y[obs])
    y[run.free] = dist.sample_mvn(m, C, rng)
    return y


def partial_forward(runs: list[PartialRun], regime: RegimeParams, rng: np.random.Generator,
                    init: NDArray | None = None) -> ForwardResult:
    """Forward messages for a day whose runs may be partially observed.

    Partial runs are scored by the marginal density of their observed entries;
    runs with nothing observed contribute a flat emission. When a predecessor
    is itself partial it is completed by a draw from its filtered predictive
    (state from the current forward message, free entries from that state's
    conditional Gaussian), so the follower's emission has a full leader. The
    rng is only consumed when such a completion is needed.
    """
    if not runs:
        raise InputError("no runs to infer states for")
    K = regime.K
    init = stationary_distribution(regime.pi) if init is None else np.asarray(init, float)
    I = len(runs)
    log_em = np.zeros((I, K))
    alpha = np.empty((I, K))
    log_c = np.zeros(I)
    alpha[0] = init / init.sum()
    complete = np.array([r.is_complete for r in runs])
    both = np.flatnonzero(complete[1:] & complete[:-1]) + 1
    if both.size:
        Y = np.array([r.values for r in runs])
        log_em[both] = pair_log_emissions(Y[both - 1], Y[both], regime)
    filled_prev = None
    for i in range(1, I):
        if filled_prev is None:
            if complete[0]:
                filled_prev = runs[0].values.copy()
            else:
                s = dist.sample_categorical(alpha[0], rng)
                filled_prev = _fill(runs[0], regime.mu[s], regime.sigma[s], rng)
        if not (complete[i] and complete[i - 1]):
            log_em[i] = _partial_log_emission(filled_prev, runs[i], regime)
        pred = alpha[i - 1] @ regime.pi
        shift = log_em[i].max()
        a = pred * np.exp(log_em[i] - shift)
        c = a.sum()
        if not c > 0 or not np.isfinite(c):
            raise NumericalUnderflow(f"forward message vanished at run {i}")
        alpha[i] = a / c
        log_c[i] = np.log(c) + shift
        if i < I - 1:
            if complete[i]:
                nxt = runs[i].values
            else:
                s = dist.sample_categorical(alpha[i], rng)
                nxt = _fill(runs[i], regime.A[s] @ filled_prev + regime.mu[s], regime.sigma[s], rng)
            filled_prev = nxt
    return ForwardResult(messages=alpha, log_normalizers=log_c, log_emissions=log_em)


def infer_states_partial(runs: list[PartialRun], regime: RegimeParams, rng: np.random.Generator,
                         init: NDArray | None = None) -> NDArray:
    """Draw the states of a day's departed runs given their observed entries."""
    return backward_sample_from(partial_forward(runs, regime, rng, init), regime.pi, rng)


# --- rolling forecast ----------------------------------------------------------------------

def forecast_one_draw(runs: list[PartialRun], regime: RegimeParams, rng: np.random.Generator):
    """States and completed run vectors of one posterior draw.

    Returns ``(states, filled)`` where ``filled[i]`` is run ``i`` with every
    unobserved entry replaced by this draw's forecast.
    """
    z = infer_states_partial(runs, regime, rng)
    filled = []
    for i, run in enumerate(runs):
        if run.is_complete:
            filled.append(run.values.copy())
            continue
        if i == 0:
            filled.append(_fill(run, regime.mu[z[0]], regime.sigma[z[0]], rng))
            continue
        nxt = runs[i + 1] if i + 1 < len(runs) else None
        z_next = int(z[i + 1]) if nxt is not None else None
        y = run.values.copy()
        y[run.free] = conditional_forecast_pair(filled[i - 1], run, nxt, int(z[i]), z_next, regime, rng)
        filled.append(y)
    return z, filled


def draw_stream(seed: int, draw_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, draw_index]))


def rolling_forecast(
    runs: list[PartialRun],
    draws: list[PosteriorDraw],
    targets,
    seed: int = 0,
    day_id: str = "",
    n: int | None = None,
    entries_map: ArrayLike | None = None,
    stats=None,
    threads: int = 1,
) -> list[ForecastBundle]:
    """Forecast the unobserved entries of each target run (1-based indices).

    Each posterior draw contributes one sample per target, using its own rng
    stream keyed by ``(seed, draw index)``; results do not depend on
    ``threads``. ``entries_map`` maps model dimensions to run-vector entries
    when the model covers only part of the run vector.
    """
    if not draws:
        raise InputError("posterior has no draws")
    targets = sorted(int(t) for t in targets)
    for t in targets:
        if t < 2:
            raise TargetBeforeSecondRun(f"run {t} has no modelled predecessor")
        if t > len(runs):
            raise IndexOutOfRange(f"target run {t} has not departed (only {len(runs)} runs)")
    d = runs[0].dim
    entries_map = np.arange(d) if entries_map is None else np.asarray(entries_map, dtype=int)
    if n is None:
        n = (d - 1) // 2

    def one(r):
        _, filled = forecast_one_draw(runs, draws[r].regime, draw_stream(seed, r))
        return [filled[t - 1][runs[t - 1].free] for t in targets]

    idx = range(len(draws))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_draw = list(pool.map(one, idx))
    else:
        per_draw = [one(r) for r in idx]
    bundles = []
    for c, t in enumerate(targets):
        run = runs[t - 1]
        samples = np.array([row[c] for row in per_draw]).reshape(len(draws), run.free.size)
        full = np.full(2 * n + 1, np.nan)
        full_mask = np.zeros(2 * n + 1, dtype=bool)
        full[entries_map], full_mask[entries_map] = run.values, run.mask
        bundles.append(ForecastBundle(
            day_id=day_id, run_index=t, entries=entries_map[run.free], samples=samples,
            n=n, observed=PartialRun(np.nan_to_num(full), full_mask), stats=stats,
        ))
    return bundles


def merge_bundles(bundles: list[ForecastBundle]) -> list[ForecastBundle]:
    """Combine bundles of the same target (e.g. from separate link-time and
    occupancy models) into one, pairing samples draw by draw.
    """
    merged: dict = {}
    for b in bundles:
        key = (b.day_id, int(b.run_index))
        if key not in merged:
            merged[key] = [b]
            continue
        if merged[key][0].samples.shape[0] != b.samples.shape[0]:
            raise InputError(f"run {key[1]} of {key[0]}: bundles have different draw counts")
        merged[key].append(b)
    out = []
    for key, group in merged.items():
        entries = np.concatenate([b.entries for b in group])
        if np.unique(entries).size != entries.size:
            raise InputError(f"run {key[1]} of {key[0]}: overlapping forecast entries")
        X = np.hstack([b.original() for b in group])
        order = np.argsort(entries)
        out.append(ForecastBundle(key[0], key[1], entries[order], X[:, order], group[0].n))
    return out


# --- summaries ----------------------------------------------------------------------------

def predictive_summary(bundle: ForecastBundle, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)):
    """Per-entry mean and linearly interpolated quantiles, in original units."""
    X = bundle.original()
    if X.size == 0 or X.shape[0] == 0:
        raise EmptyBundle(f"no samples for run {bundle.run_index} of {bundle.day_id}")
    return X.mean(axis=0), np.quantile(X, quantiles, axis=0)


def trip_time_predictive(bundle: ForecastBundle, m1: int, m2: int) -> NDArray:
    """Samples of the trip time from stop ``m1`` to ``m2`` (1-based stops, original units).

    Observed links in the range contribute their observed values; the rest
    come from the bundle's samples.
    """
    n = bundle.n
    if not 1 <= m1 < m2 <= n + 1:
        raise IndexOutOfRange(f"need 1 <= m1 < m2 <= {n + 1}, got m1={m1}, m2={m2}")
    X = bundle.original()
    obs = bundle.observed_original()
    total = np.zeros(X.shape[0])
    col = {int(e): c for c, e in enumerate(bundle.entries)}
    for link in range(m1 - 1, m2 - 1):
        if link in col:
            total += X[:, col[link]]
        elif obs is not None and np.isfinite(obs[link]):
            total += obs[link]
        else:
            raise IndexOutOfRange(f"link {link + 1} is neither observed nor forecast")
    return total
