"""Synthetic studies: parameter recovery, model ladder, and prefix-length study.

All studies work on simulated corpora mapped to seconds and passengers with
:class:`~busmsar.config.UnitsConfig`, so fitting and forecasting go through
the same standardization path as real data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import FitConfig, UnitsConfig
from .evaluation import crps_samples
from .forecasting import ForecastBundle, merge_bundles
from .inference import PosteriorDraw, align_to_truth, gibbs_fit, match_states_to_truth, posterior_mean
from .io import COMPLETE, standardize
from .model import DaySequence, Hyperparams, RegimeParams, random_regime, simulate_dataset
from .pipeline import fit_model, forecast_day


def sub_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def to_original(days: list[DaySequence], n: int, units: UnitsConfig | None = None) -> list[DaySequence]:
    mean, scale = (units or UnitsConfig()).offsets(n)
    return [DaySequence(d.day_id, d.runs * scale + mean, d.periods) for d in days]


# --- forecast instances -------------------------------------------------------------------

@dataclass
class Instance:
    """One forecasting situation: a day, a target run, and each departed run's prefix."""

    day_index: int
    target: int
    prefixes: dict[int, int]


def make_instances(days: list[DaySequence], n: int, count: int, rng: np.random.Generator,
                   min_run: int = 3) -> list[Instance]:
    """Random cuts: runs before the target complete, target with a prefix in
    ``0..n-1``, and (when it exists) the follower with a prefix no longer than
    the target's.
    """
    out = []
    for _ in range(count):
        di = int(rng.integers(len(days)))
        I = len(days[di])
        j = int(rng.integers(min_run, I + 1))
        m = int(rng.integers(0, n))
        prefixes = {r: COMPLETE for r in range(1, j)}
        prefixes[j] = m
        if j < I:
            prefixes[j + 1] = int(rng.integers(0, m + 1))
        out.append(Instance(di, j, prefixes))
    return out


def standardized_crps(bundle: ForecastBundle, truth_run: np.ndarray, stats, entries=None) -> float:
    """Mean CRPS over the bundle's entries (or a subset), in standardized units."""
    X = bundle.original()
    cols = range(len(bundle.entries)) if entries is None else [
        int(np.flatnonzero(bundle.entries == e)[0]) for e in entries]
    vals = []
    for c in cols:
        e = int(bundle.entries[c])
        vals.append(crps_samples(X[:, c] / stats.std[e], truth_run[e] / stats.std[e]))
    return float(np.mean(vals))


def unstandardize_regime(reg: RegimeParams, stats) -> RegimeParams:
    """Express a regime fitted on z-scored data in the original coordinates.

    With ``y = D y' + m``: ``A = D A' D^-1``, ``mu = D mu' + m - A m``,
    ``Sigma = D Sigma' D``.
    """
    D, m = stats.std, stats.mean
    A = D[None, :, None] * reg.A / D[None, None, :]
    mu = reg.mu * D + m - A @ m
    sigma = D[None, :, None] * reg.sigma * D[None, None, :]
    return RegimeParams(pi=reg.pi, A=A, mu=mu, sigma=sigma)


# --- parameter recovery ---------------------------------------------------------------------

@dataclass
class RecoveryResult:
    pi_error: float
    state_accuracy: float
    rel_errors: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(max(v) for v in self.rel_errors.values())


def separated_regimes(n: int, K: int, seed: int, stay_prob: float = 0.7,
                      intercept_norm: float = 3.0) -> RegimeParams:
    """Well-separated regimes for recovery studies.

    Persistent coefficient matrices spread the states' stationary means far
    apart, while every intercept has the same moderate norm so none of them is
    too small to estimate and none conflicts strongly with the zero-mean prior.
    Very sticky chains (stay probability near 1) make a poor mode attractive:
    one persistent near-random-walk regime plus a wide regime that absorbs the
    switches. Moderate stickiness avoids that trap.
    """
    rng = np.random.default_rng(seed)
    reg = random_regime(2 * n + 1, K, rng, stay_prob=stay_prob, noise_scale=0.5, diag_range=(0.6, 0.9))
    mu = reg.mu * (intercept_norm / np.linalg.norm(reg.mu, axis=1, keepdims=True))
    return RegimeParams(pi=reg.pi, A=reg.A, mu=mu, sigma=reg.sigma)


def recovery_study(truth: RegimeParams, n_days: int, runs_per_day: int, n_burn: int, n_keep: int,
                   seed: int = 0, threads: int = 1, n_starts: int = 4,
                   standardize_data: bool = False) -> RecoveryResult:
    """Simulate from ``truth``, standardize, fit with the true K, align labels,
    and measure errors after mapping the estimates back to the simulation scale.

    The state sequence is the per-run posterior mode over retained draws
    (after aligning each draw's labels to the truth).
    """
    sim = simulate_dataset(truth, n_days, runs_per_day, seed)
    K = truth.K
    days, stats = standardize(sim.days) if standardize_data else (sim.days, None)
    draws = gibbs_fit(days, Hyperparams.default(truth.dim, K), K, n_burn=n_burn, n_keep=n_keep,
                      seed=seed + 1, keep_states=True, threads=threads, n_starts=n_starts)
    aligned, votes = [], [np.zeros((len(z), K)) for z in sim.states]
    for dr in draws:
        perm = match_states_to_truth(dr.states, sim.states, K)
        reg = align_to_truth(dr.regime, perm)
        aligned.append(PosteriorDraw(reg if stats is None else unstandardize_regime(reg, stats)))
        for v, z in zip(votes, dr.states):
            v[np.arange(len(z)), perm[z]] += 1
    est = posterior_mean(aligned)
    mode = [v.argmax(axis=1) for v in votes]
    acc = float(np.mean(np.concatenate([m == z for m, z in zip(mode, sim.states)])))
    rel = {
        name: [float(np.linalg.norm(getattr(est, name)[k] - getattr(truth, name)[k])
                     / np.linalg.norm(getattr(truth, name)[k])) for k in range(K)]
        for name in ("A", "mu", "sigma")
    }
    return RecoveryResult(float(np.max(np.abs(est.pi - truth.pi))), acc, rel)


# --- model ladder ---------------------------------------------------------------------------

@dataclass
class LadderSettings:
    n: int = 4
    K_true: int = 3
    K_fit: int = 3
    train_days: int = 20
    test_days: int = 5
    runs_per_day: int = 30
    n_burn: int = 300
    n_keep: int = 100
    instances: int = 100
    coupling: float = 0.6
    cross_lag: float = 0.3
    stay_prob: float = 0.85


def ladder_corpus(seed: int, s: LadderSettings):
    truth = random_regime(2 * s.n + 1, s.K_true, np.random.default_rng(sub_seed(seed, 0)), coupling=s.coupling,
                          cross_lag=s.cross_lag, stay_prob=s.stay_prob)
    sim = simulate_dataset(truth, s.train_days + s.test_days, s.runs_per_day, sub_seed(seed, 1))
    days = to_original(sim.days, s.n)
    return truth, days[:s.train_days], days[s.train_days:]


def run_ladder(seed: int, s: LadderSettings | None = None) -> dict[str, float]:
    """Mean standardized CRPS of the target run's forecast entries per model.

    Models: MSAR-J (joint VAR), BGMM-J (joint mixture, own observation only),
    MSAR-S (separate link-time and occupancy VARs, forecasts merged).
    """
    s = s or LadderSettings()
    _, train, test = ladder_corpus(seed, s)
    _, stats = standardize(train)
    fits = {}
    for name, model, variant in [("MSAR-J", "msar", "joint"), ("BGMM-J", "bgmm", "joint"),
                                 ("MSAR-S/ttime", "msar", "ttime"), ("MSAR-S/occupancy", "msar", "occupancy")]:
        cfg = FitConfig(model=model, variant=variant, K=s.K_fit, n_burn=s.n_burn, n_keep=s.n_keep, seed=seed)
        fits[name] = fit_model(train, cfg, stats)
    instances = make_instances(test, s.n, s.instances, np.random.default_rng(sub_seed(seed, 2)))
    scores = {"MSAR-J": [], "BGMM-J": [], "MSAR-S": []}
    for i, inst in enumerate(instances):
        day = test[inst.day_index]
        truth_run = day.runs[inst.target - 1]
        fseed = sub_seed(seed, 3, i)
        for name in ("MSAR-J", "BGMM-J"):
            b = forecast_day(fits[name], day, inst.prefixes, [inst.target], seed=fseed)[0]
            scores[name].append(standardized_crps(b, truth_run, stats))
        parts = [forecast_day(fits[f"MSAR-S/{v}"], day, inst.prefixes, [inst.target], seed=fseed)[0]
                 for v in ("ttime", "occupancy")]
        scores["MSAR-S"].append(standardized_crps(merge_bundles(parts)[0], truth_run, stats))
    return {k: float(np.mean(v)) for k, v in scores.items()}


def ladder_gaps(results: list[dict[str, float]], better: str, worse: str):
    """Relative gap of the means and the gap in units of its standard error over seeds."""
    a = np.array([r[better] for r in results])
    b = np.array([r[worse] for r in results])
    diff = b - a
    rel = float(diff.mean() / b.mean())
    se = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else float("inf")
    return rel, float(diff.mean() / se) if se > 0 else float("inf")


# --- more observations help ---------------------------------------------------------------------

@dataclass
class PrefixSettings:
    n: int = 6
    K: int = 2
    train_days: int = 20
    test_days: int = 10
    runs_per_day: int = 30
    n_burn: int = 300
    n_keep: int = 100
    instances: int = 200
    link_corr: float = 0.9
    link_noise: float = 1.5


def with_link_correlation(reg: RegimeParams, n: int, rho: float, scale: float) -> RegimeParams:
    """Add noise shared along the route: ``scale^2 * rho^|m - m'|`` between link times."""
    idx = np.arange(n)
    sigma = reg.sigma.copy()
    sigma[:, :n, :n] += scale**2 * rho ** np.abs(idx[:, None] - idx[None, :])
    return RegimeParams(pi=reg.pi, A=reg.A, mu=reg.mu, sigma=sigma)


def prefix_study(seed: int, s: PrefixSettings | None = None) -> np.ndarray:
    """Average CRPS per prefix step over shared remaining links.

    Returns an ``(n - 1, 2)`` array whose row ``m`` holds the mean standardized
    CRPS of links ``m+2..n`` when ``m`` and when ``m + 1`` links are observed.
    Every instance reuses one rng seed across prefixes. Link times share
    route-wide noise correlated along the route, so an observed link is
    informative about the ones after it.
    """
    s = s or PrefixSettings()
    truth = random_regime(2 * s.n + 1, s.K, np.random.default_rng(sub_seed(seed, 0)), coupling=0.5)
    truth = with_link_correlation(truth, s.n, s.link_corr, s.link_noise)
    sim = simulate_dataset(truth, s.train_days + s.test_days, s.runs_per_day, sub_seed(seed, 1))
    days = to_original(sim.days, s.n)
    train, test = days[:s.train_days], days[s.train_days:]
    _, stats = standardize(train)
    model = fit_model(train, FitConfig(K=s.K, n_burn=s.n_burn, n_keep=s.n_keep, seed=seed), stats)
    rng = np.random.default_rng(sub_seed(seed, 2))
    pairs = np.zeros((s.n - 1, 2))
    for i in range(s.instances):
        di = int(rng.integers(len(test)))
        j = int(rng.integers(3, s.runs_per_day + 1))
        day = test[di]
        fseed = sub_seed(seed, 3, i)
        per_prefix = []
        for m in range(s.n):
            prefixes = {r: COMPLETE for r in range(1, j)}
            prefixes[j] = m
            per_prefix.append(forecast_day(model, day, prefixes, [j], seed=fseed)[0])
        truth_run = day.runs[j - 1]
        for m in range(s.n - 1):
            shared = list(range(m + 1, s.n))  # links unobserved under both prefixes
            pairs[m, 0] += standardized_crps(per_prefix[m], truth_run, stats, shared)
            pairs[m, 1] += standardized_crps(per_prefix[m + 1], truth_run, stats, shared)
    return pairs / s.instances

