import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.stats import kstest, norm

from busmsar import distributions as dist
from busmsar import forecasting as fc
from busmsar import inference as inf
from busmsar.errors import EmptyBundle, IndexOutOfRange, TargetBeforeSecondRun
from busmsar.inference import PosteriorDraw
from busmsar.model import Hyperparams, RegimeParams, random_regime, simulate_dataset, stationary_distribution
from oracles import enumerate_paths


def one_state(A, mu, sigma):
    return RegimeParams(pi=[[1.0]], A=[A], mu=[mu], sigma=[sigma])


# --- pair_joint ------------------------------------------------------------------------

def test_pair_joint_scalar_hand_values():
    reg = one_state([[0.5]], [0.0], [[1.0]])
    m, L = fc.pair_joint([2.0], 0, 0, reg)
    assert_allclose(L, [[1.0, 0.5], [0.5, 1.25]])
    assert_allclose(m, [1.0, 0.5])


def test_pair_joint_decoupled_when_follower_ignores_leader():
    rng = np.random.default_rng(0)
    reg = random_regime(3, 2, rng)
    reg.A[1] = 0.0
    _, L = fc.pair_joint(rng.normal(size=3), 0, 1, reg)
    assert_allclose(L[:3, 3:], 0.0)
    assert_allclose(L[:3, :3], reg.sigma[0])
    assert_allclose(L[3:, 3:], reg.sigma[1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pair_joint_symmetric_spd(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    reg = RegimeParams(
        pi=[[0.5, 0.5], [0.5, 0.5]],
        A=rng.normal(size=(2, d, d)),
        mu=rng.normal(size=(2, d)),
        sigma=[B @ B.T + 0.1 * np.eye(d) for B in rng.normal(size=(2, d, d))],
    )
    _, L = fc.pair_joint(rng.normal(size=d), 0, 1, reg)
    assert_allclose(L, L.T)
    assert np.linalg.eigvalsh(L).min() > 0


def test_pair_joint_matches_monte_carlo():
    rng = np.random.default_rng(3)
    reg = random_regime(3, 2, rng)
    y0 = rng.normal(size=3)
    y1 = reg.A[0] @ y0 + reg.mu[0] + rng.multivariate_normal(np.zeros(3), reg.sigma[0], size=200_000)
    y2 = y1 @ reg.A[1].T + reg.mu[1] + rng.multivariate_normal(np.zeros(3), reg.sigma[1], size=200_000)
    m, L = fc.pair_joint(y0, 0, 1, reg)
    Y = np.hstack([y1, y2])
    assert_allclose(Y.mean(axis=0), m, atol=0.02)
    assert_allclose(np.cov(Y.T), L, atol=0.03)


# --- conditional_forecast_pair -----------------------------------------------------------

def test_forecast_pair_unobserved_is_one_step_predictive():
    rng = np.random.default_rng(1)
    reg = random_regime(3, 1, rng)
    y_prev = rng.normal(size=3)
    empty = fc.PartialRun(np.zeros(3), np.zeros(3, bool))
    m, C = fc.conditional_moments(y_prev, empty, None, 0, None, reg)
    assert_allclose(m, reg.A[0] @ y_prev + reg.mu[0])
    assert_allclose(C, reg.sigma[0])


def test_forecast_pair_complete_run_gives_empty_sample():
    reg = random_regime(3, 1, np.random.default_rng(0))
    out = fc.conditional_forecast_pair(np.zeros(3), fc.PartialRun.complete(np.ones(3)), None, 0, None, reg,
                                       np.random.default_rng(0))
    assert out.shape == (0,)


def test_forecast_pair_hand_schur_case():
    reg = one_state(np.zeros((2, 2)), [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    run = fc.PartialRun([0.0, 1.0], [False, True])
    m, C = fc.conditional_moments(np.zeros(2), run, None, 0, None, reg)
    assert_allclose(m, [0.5], atol=1e-12)
    assert_allclose(C, [[0.75]], atol=1e-12)
    rng = np.random.default_rng(5)
    s = np.array([fc.conditional_forecast_pair(np.zeros(2), run, None, 0, None, reg, rng) for _ in range(40_000)])
    assert abs(s.mean() - 0.5) < 0.015 and abs(s.var() - 0.75) < 0.02


def test_forecast_pair_follower_matches_joint_conditioning():
    rng = np.random.default_rng(7)
    reg = random_regime(5, 2, rng)
    y_prev = rng.normal(size=5)
    run = fc.PartialRun(rng.normal(size=5), [True, False, True, False, True])
    nxt = fc.PartialRun(rng.normal(size=5), [True, False, True, False, True])
    m, C = fc.conditional_moments(y_prev, run, nxt, 0, 1, reg)
    mean, cov = fc.pair_joint(y_prev, 0, 1, reg)
    obs = [0, 2, 4, 5, 7, 9]
    vals = np.concatenate([run.values[[0, 2, 4]], nxt.values[[0, 2, 4]]])
    m_ref, C_ref = dist.gaussian_condition(mean, cov, obs, vals)
    assert_allclose(m, m_ref[:2])
    assert_allclose(C, C_ref[:2, :2])


def test_follower_information_reduces_variance():
    rng = np.random.default_rng(8)
    reg = random_regime(5, 1, rng)
    run = fc.PartialRun(rng.normal(size=5), [True, False, True, False, True])
    nxt = fc.PartialRun.complete(rng.normal(size=5))
    _, C_alone = fc.conditional_moments(np.zeros(5), run, None, 0, None, reg)
    _, C_pair = fc.conditional_moments(np.zeros(5), run, nxt, 0, 0, reg)
    assert np.all(np.linalg.eigvalsh(C_alone - C_pair) > -1e-12)


def test_conditioning_coherence_3d():
    rng = np.random.default_rng(11)
    reg = random_regime(3, 1, rng)
    y_prev = rng.normal(size=3)
    empty = fc.PartialRun(np.zeros(3), np.zeros(3, bool))
    m_all, C_all = fc.conditional_moments(y_prev, empty, None, 0, None, reg)
    m_two, C_two = dist.gaussian_condition(m_all, C_all, [0], [0.3])
    runs = [fc.PartialRun.complete(y_prev), fc.PartialRun([0.3, 0, 0], [True, False, False])]
    draws = [PosteriorDraw(reg)] * 20_000
    b = fc.rolling_forecast(runs, draws, [2], seed=4)[0]
    se = np.sqrt(np.diag(C_two) / 20_000)
    assert np.all(np.abs(b.samples.mean(axis=0) - m_two) < 4 * se)
    assert_allclose(np.cov(b.samples.T), C_two, atol=0.03)


# --- state inference with partial runs ---------------------------------------------------

def random_day(reg, I, rng):
    y = [rng.normal(size=reg.dim)]
    z = rng.integers(reg.K)
    for _ in range(1, I):
        z = rng.choice(reg.K, p=reg.pi[z])
        y.append(rng.multivariate_normal(reg.A[z] @ y[-1] + reg.mu[z], reg.sigma[z]))
    return np.array(y)


@pytest.mark.parametrize("seed", range(5))
def test_partial_marginals_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    reg = random_regime(3, 2, rng, mean_separation=1.0)
    Y = random_day(reg, 3, rng)
    runs = [fc.PartialRun.complete(Y[0]), fc.PartialRun.complete(Y[1]), fc.PartialRun.from_prefix(Y[2], 0, 1)]
    init = stationary_distribution(reg.pi)
    fwd = fc.partial_forward(runs, reg, np.random.default_rng(0), init)
    gamma = fwd.messages * inf.backward_messages(fwd, reg.pi)
    gamma /= gamma.sum(axis=1, keepdims=True)
    logz, marg, _ = enumerate_paths(Y, reg, init, observed=[[0, 1, 2], [0, 1, 2], [2]])
    assert_allclose(gamma, marg, atol=1e-8)
    assert_allclose(fwd.loglik, logz, atol=1e-8)


def test_zero_observed_trailing_run_is_one_step_prediction():
    rng = np.random.default_rng(2)
    reg = random_regime(3, 3, rng)
    Y = random_day(reg, 4, rng)
    runs = [fc.PartialRun.complete(y) for y in Y[:3]] + [fc.PartialRun(Y[3], np.zeros(3, bool))]
    fwd = fc.partial_forward(runs, reg, np.random.default_rng(0))
    assert_allclose(fwd.messages[3], fwd.messages[2] @ reg.pi, atol=1e-12)


def test_complete_runs_reduce_to_inference_forward():
    rng = np.random.default_rng(4)
    reg = random_regime(5, 3, rng)
    Y = random_day(reg, 8, rng)
    fwd = fc.partial_forward([fc.PartialRun.complete(y) for y in Y], reg, np.random.default_rng(0))
    ref = inf.forward_pass(Y, reg)
    assert_allclose(fwd.messages, ref.messages, atol=1e-12)
    assert_allclose(fwd.loglik, ref.loglik, atol=1e-10)


# --- rolling forecast ------------------------------------------------------------------------

def test_rolling_single_draw_is_var_predictive_sample():
    reg = one_state([[0.6]], [0.5], [[0.4]])
    runs = [fc.PartialRun.complete([1.0]), fc.PartialRun([0.0], [False])]
    b = fc.rolling_forecast(runs, [PosteriorDraw(reg)], [2], seed=3)[0]
    assert b.samples.shape == (1, 1)
    assert_allclose(b.entries, [0])


def test_rolling_law_consistency_ks():
    reg = one_state([[0.6]], [0.5], [[0.4]])
    runs = [fc.PartialRun.complete([1.0]), fc.PartialRun([0.0], [False])]
    b = fc.rolling_forecast(runs, [PosteriorDraw(reg)] * 10_000, [2], seed=9)[0]
    stat = kstest(b.samples[:, 0], norm(1.1, np.sqrt(0.4)).cdf).statistic
    assert stat < 0.02


def test_rolling_target_rules_and_mask_discipline():
    rng = np.random.default_rng(0)
    reg = random_regime(5, 2, rng)
    Y = random_day(reg, 3, rng)
    runs = [fc.PartialRun.from_prefix(Y[0], 1, 2), fc.PartialRun.from_prefix(Y[1], 1, 2),
            fc.PartialRun.from_prefix(Y[2], 0, 2)]
    with pytest.raises(TargetBeforeSecondRun):
        fc.rolling_forecast(runs, [PosteriorDraw(reg)], [1, 2])
    bundles = fc.rolling_forecast(runs, [PosteriorDraw(reg)] * 5, [2, 3], seed=1)
    for b, run in zip(bundles, runs[1:]):
        assert not np.any(run.mask[b.entries])
        assert b.samples.shape == (5, (~run.mask).sum())
        assert np.all(np.isfinite(b.samples))


def test_rolling_deterministic_and_thread_independent():
    rng = np.random.default_rng(5)
    reg = random_regime(5, 2, rng)
    Y = random_day(reg, 4, rng)
    runs = [fc.PartialRun.complete(Y[0]), fc.PartialRun.from_prefix(Y[1], 1, 2),
            fc.PartialRun.from_prefix(Y[2], 1, 2), fc.PartialRun.from_prefix(Y[3], 0, 2)]
    draws = [PosteriorDraw(reg)] * 30
    a = fc.rolling_forecast(runs, draws, [2, 3, 4], seed=6)
    b = fc.rolling_forecast(runs, draws, [2, 3, 4], seed=6, threads=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.samples, y.samples)


def test_rolling_permutation_invariance():
    rng = np.random.default_rng(12)
    reg = random_regime(3, 2, rng, stay_prob=0.7)
    Y = random_day(reg, 3, rng)
    runs = [fc.PartialRun.complete(Y[0]), fc.PartialRun.complete(Y[1]), fc.PartialRun(Y[2], [True, False, False])]
    N = 20_000
    a = fc.rolling_forecast(runs, [PosteriorDraw(reg)] * N, [3], seed=1)[0].samples
    b = fc.rolling_forecast(runs, [PosteriorDraw(reg.relabel([1, 0]))] * N, [3], seed=2)[0].samples
    se = np.sqrt(a.var(axis=0) / N + b.var(axis=0) / N)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se)
    assert_allclose(a.var(axis=0), b.var(axis=0), rtol=0.05)


def test_true_regimes_beat_plain_var_on_switching_data():
    rng = np.random.default_rng(21)
    truth = random_regime(3, 2, rng, mean_separation=4.0, stay_prob=0.9)
    sim = simulate_dataset(truth, 40, 30, 3)
    single = inf.gibbs_fit(sim.days[:30], Hyperparams.default(3, 1), 1, n_burn=100, n_keep=30, seed=2)
    err_true, err_var = [], []
    for day in sim.days[30:]:
        for j in range(5, 30, 6):
            runs = [fc.PartialRun.complete(y) for y in day.runs[:j - 1]]
            runs.append(fc.PartialRun(day.runs[j - 1], [False, False, True]))
            for draws, errs in (([PosteriorDraw(truth)] * 30, err_true), (single, err_var)):
                b = fc.rolling_forecast(runs, draws, [j], seed=j)[0]
                errs.append(b.samples.mean(axis=0) - day.runs[j - 1, :2])
    rmse = lambda e: np.sqrt(np.mean(np.square(e)))
    assert rmse(err_true) < rmse(err_var)


# --- summaries -----------------------------------------------------------------------------

def bundle_of(samples, entries, n=2, observed=None):
    return fc.ForecastBundle("d", 2, np.asarray(entries), np.asarray(samples, float), n, observed)


def test_predictive_summary_examples():
    mean, q = fc.predictive_summary(bundle_of(np.full((5, 1), 3.0), [0]))
    assert_allclose(mean, [3.0]) and assert_allclose(q, 3.0)
    mean, q = fc.predictive_summary(bundle_of([[1], [2], [3], [4]], [0]), [0.5])
    assert_allclose(q, [[2.5]])
    assert_allclose(mean, [2.5])
    with pytest.raises(EmptyBundle):
        fc.predictive_summary(bundle_of(np.empty((0, 1)), [0]))


def test_predictive_summary_original_units():
    class Stats:
        mean = np.array([100.0, 120.0, 20.0, 20.0, 300.0])
        std = np.array([10.0, 20.0, 5.0, 5.0, 60.0])
    b = bundle_of([[0.0, 1.0], [2.0, -1.0]], [1, 3])
    b.stats = Stats()
    mean, _ = fc.predictive_summary(b)
    assert_allclose(mean, [140.0, 20.0])


def test_trip_time_predictive():
    obs = fc.PartialRun([100.0, 120.0, 80.0, 5, 6, 7, 300.0], [True, False, False, True, False, False, True])
    b = bundle_of([[110.0, 70.0], [130.0, 90.0]], [1, 2], n=3, observed=obs)
    assert_allclose(fc.trip_time_predictive(b, 1, 2), [100.0, 100.0])
    assert_allclose(fc.trip_time_predictive(b, 1, 3), [210.0, 230.0])
    assert_allclose(fc.trip_time_predictive(b, 2, 4), [180.0, 220.0])
    for m1, m2 in [(0, 2), (3, 3), (1, 5)]:
        with pytest.raises(IndexOutOfRange):
            fc.trip_time_predictive(b, m1, m2)


def test_longer_trips_spread_more_on_positively_correlated_links():
    rng = np.random.default_rng(0)
    C = 0.5 * np.ones((4, 4)) + 0.5 * np.eye(4)
    X = rng.multivariate_normal(np.full(4, 100.0), 100 * C, size=5000)
    obs = fc.PartialRun(np.zeros(9), np.eye(9, dtype=bool)[8])
    b = bundle_of(X, [0, 1, 2, 3], n=4, observed=obs)
    spreads = [fc.trip_time_predictive(b, 1, m2).std() for m2 in range(2, 6)]
    assert all(a < b for a, b in zip(spreads, spreads[1:]))
