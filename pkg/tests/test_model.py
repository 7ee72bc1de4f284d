import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from busmsar.errors import IndexOutOfRange, LengthMismatch
from busmsar.model import (
    Hyperparams,
    RegimeParams,
    assemble_run_vector,
    disassemble_run_vector,
    entry_label,
    parse_entry_label,
    random_regime,
    simulate_dataset,
    stationary_distribution,
    trip_travel_time,
)


def test_assemble_examples():
    assert_allclose(assemble_run_vector([100, 120], [10, 12], 300), [100, 120, 10, 12, 300])
    assert_allclose(assemble_run_vector([60], [5], 200), [60, 5, 200])
    with pytest.raises(LengthMismatch):
        assemble_run_vector([1, 2], [3], 4)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_assemble_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    ell, f, h = rng.normal(size=n), rng.normal(size=n), rng.normal()
    ell2, f2, h2 = disassemble_run_vector(assemble_run_vector(ell, f, h))
    assert np.array_equal(ell, ell2) and np.array_equal(f, f2) and h == h2


@pytest.mark.parametrize("n", [1, 3])
def test_entry_labels_roundtrip(n):
    for i in range(2 * n + 1):
        assert parse_entry_label(entry_label(i, n), n) == i


def test_stationary_two_state_closed_form():
    pi = np.array([[0.9, 0.1], [0.5, 0.5]])
    v = stationary_distribution(pi)
    assert_allclose(v, [5 / 6, 1 / 6], atol=1e-12)
    assert np.max(np.abs(v @ pi - v)) < 1e-10


def test_stationary_reducible_falls_back():
    with pytest.warns(RuntimeWarning):
        v = stationary_distribution(np.eye(3))
    assert_allclose(v, np.full(3, 1 / 3))


def test_stationary_doubly_stochastic_is_uniform():
    pi = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert_allclose(stationary_distribution(pi), np.full(3, 1 / 3), atol=1e-12)


def test_stationary_slow_mixing_chain_converges():
    eps = 1e-4
    pi = np.array([[1 - eps, eps], [2 * eps, 1 - 2 * eps]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = stationary_distribution(pi)
    assert_allclose(v, [2 / 3, 1 / 3], atol=1e-10)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_stationary_fixed_point(K, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(K), size=K)
    v = stationary_distribution(pi)
    assert np.max(np.abs(v @ pi - v)) < 1e-10
    assert abs(v.sum() - 1) < 1e-12


def test_trip_travel_time():
    assert trip_travel_time([100, 120, 80], 1, 4) == 300
    assert trip_travel_time([100, 120, 80], 2, 3) == 120
    assert trip_travel_time(np.zeros(3), 1, 3) == 0
    for m1, m2 in [(0, 2), (2, 2), (1, 5)]:
        with pytest.raises(IndexOutOfRange):
            trip_travel_time([100, 120, 80], m1, m2)


def test_hyperparams_defaults():
    n, K = 4, 3
    h = Hyperparams.default(2 * n + 1, K)
    assert h.nu0 == 2 * n + 3 and h.lam0 == 2.0
    assert_allclose(h.alpha, [0.2] * K)
    h.validate(K)
    assert Hyperparams.from_dict(h.to_dict()).to_dict() == h.to_dict()


def noiseless_regime(d=3):
    A = np.array([[[0.5, 0.1, 0.0], [0.0, 0.3, 0.2], [0.1, 0.0, 0.4]]])[:, :d, :d]
    return RegimeParams(pi=[[1.0]], A=A, mu=np.array([[1.0, -1.0, 0.5]])[:, :d],
                        sigma=1e-14 * np.eye(d)[None])


def test_simulate_noiseless_follows_recursion():
    p = noiseless_regime()
    sim = simulate_dataset(p, 3, 6, 0)
    for day in sim.days:
        Y = day.runs
        pred = Y[:-1] @ p.A[0].T + p.mu[0]
        assert np.max(np.abs(Y[1:] - pred)) < 1e-6


def test_simulate_deterministic_by_seed():
    p = random_regime(5, 2, np.random.default_rng(1))
    a, b = simulate_dataset(p, 4, 10, 42), simulate_dataset(p, 4, 10, 42)
    for x, y in zip(a.days, b.days):
        assert np.array_equal(x.runs, y.runs)
    assert all(np.array_equal(s, t) for s, t in zip(a.states, b.states))


def test_simulated_transition_frequencies():
    p = random_regime(3, 2, np.random.default_rng(0), stay_prob=0.7)
    sim = simulate_dataset(p, 100, 1001, 5)
    counts = np.zeros((2, 2))
    for z in sim.states:
        np.add.at(counts, (z[:-1], z[1:]), 1)
    assert counts.sum() == 100_000
    assert np.max(np.abs(counts / counts.sum(axis=1, keepdims=True) - p.pi)) < 0.01


def test_simulated_states_are_first_order_markov():
    p = random_regime(3, 2, np.random.default_rng(0), stay_prob=0.7)
    sim = simulate_dataset(p, 50, 1001, 9)
    counts = np.zeros((2, 2, 2))
    for z in sim.states:
        np.add.at(counts, (z[:-2], z[1:-1], z[2:]), 1)
    second_order = counts / counts.sum(axis=2, keepdims=True)
    for a in range(2):
        assert np.max(np.abs(second_order[a] - p.pi)) < 0.02


def test_random_regime_is_stable():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_regime(7, 3, rng)
        for A in p.A:
            assert np.max(np.abs(np.linalg.eigvals(A))) <= 0.95 + 1e-12
    sim = simulate_dataset(p, 10, 1000, 0)
    assert all(np.all(np.isfinite(day.runs)) for day in sim.days)


def test_relabel_roundtrip():
    p = random_regime(3, 3, np.random.default_rng(2))
    perm = np.array([2, 0, 1])
    q = p.relabel(perm).relabel(np.argsort(perm))
    assert_allclose(q.pi, p.pi)
    assert_allclose(q.A, p.A)


@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.1, 0.9))
def test_irreducibility_matches_strong_components(K, seed, density):
    from scipy.sparse.csgraph import connected_components

    from busmsar.model import _irreducible

    adj = np.random.default_rng(seed).random((K, K)) < density
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    assert _irreducible(adj) == (n_comp == 1)
