"""Domain types for the regime-switching VAR, run-vector assembly and the simulator.

A run vector stacks one bus run as ``[link times (n), occupancies (n), headway]``.
States are 0-based throughout the Python API.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import distributions as dist
from .errors import IndexOutOfRange, InputError, LengthMismatch


def run_dim(n: int) -> int:
    return 2 * n + 1


def n_links(d: int) -> int:
    if d < 3 or d % 2 == 0:
        raise InputError(f"run vector length {d} is not 2n+1 with n >= 1")
    return (d - 1) // 2


def link_dims(n: int) -> NDArray:
    return np.arange(n)


def occupancy_dims(n: int) -> NDArray:
    return np.arange(n, 2 * n)


def headway_dim(n: int) -> int:
    return 2 * n


def entry_label(index: int, n: int) -> str:
    """Column label for a run-vector entry: ``l3``, ``f3`` (1-based link) or ``h``."""
    if index < n:
        return f"l{index + 1}"
    if index < 2 * n:
        return f"f{index - n + 1}"
    if index == 2 * n:
        return "h"
    raise IndexOutOfRange(f"entry {index} outside run vector of length {2 * n + 1}")


def parse_entry_label(label: str, n: int) -> int:
    label = label.strip()
    if label == "h":
        return 2 * n
    kind, num = label[:1], label[1:]
    if kind in ("l", "f") and num.isdigit() and 1 <= int(num) <= n:
        return int(num) - 1 + (n if kind == "f" else 0)
    raise InputError(f"unknown entry label {label!r} for n={n}")


def assemble_run_vector(link_times: ArrayLike, occupancies: ArrayLike, headway: float) -> NDArray:
    link_times = np.asarray(link_times, dtype=float).ravel()
    occupancies = np.asarray(occupancies, dtype=float).ravel()
    if link_times.size != occupancies.size or link_times.size < 1:
        raise LengthMismatch(
            f"{link_times.size} link times vs {occupancies.size} occupancies (need equal, >= 1)"
        )
    return np.concatenate([link_times, occupancies, [float(headway)]])


def disassemble_run_vector(y: ArrayLike):
    """Inverse of :func:`assemble_run_vector`: returns ``(link_times, occupancies, headway)``."""
    y = np.asarray(y, dtype=float)
    n = n_links(y.shape[-1])
    return y[..., :n], y[..., n:2 * n], y[..., 2 * n]


def trip_travel_time(link_times: ArrayLike, m1: int, m2: int) -> float:
    """Travel time from stop ``m1`` to stop ``m2`` (1-based stops, ``m1 < m2 <= n + 1``)."""
    link_times = np.asarray(link_times, dtype=float)
    n = link_times.shape[-1]
    if not 1 <= m1 < m2 <= n + 1:
        raise IndexOutOfRange(f"need 1 <= m1 < m2 <= {n + 1}, got m1={m1}, m2={m2}")
    return link_times[..., m1 - 1:m2 - 1].sum(axis=-1)


@dataclass
class DaySequence:
    """Run vectors of one service day in departure order.

    ``periods`` optionally labels each run with a time-of-day period (used by
    the mixture baseline).
    """

    day_id: str
    runs: NDArray
    periods: NDArray | None = None

    def __post_init__(self):
        self.runs = np.atleast_2d(np.asarray(self.runs, dtype=float))
        if self.periods is not None:
            self.periods = np.asarray(self.periods, dtype=int)
            if self.periods.shape != (len(self.runs),):
                raise LengthMismatch("one period label per run required")

    def __len__(self):
        return len(self.runs)

    @property
    def dim(self) -> int:
        return self.runs.shape[1]

    def select_dims(self, dims) -> "DaySequence":
        return replace(self, runs=self.runs[:, np.asarray(dims)].copy())


@dataclass
class Hyperparams:
    """Conjugate prior settings.

    ``mu0, lam0, Psi0, nu0`` parameterize the normal-inverse-Wishart prior on
    each regime's ``(mu, Sigma)``; ``M0, V0`` the matrix-normal prior on the
    coefficient matrix; ``alpha`` the Dirichlet prior on transition rows.
    """

    mu0: NDArray
    lam0: float
    Psi0: NDArray
    nu0: float
    M0: NDArray
    V0: NDArray
    alpha: NDArray

    @classmethod
    def default(cls, d: int, K: int) -> "Hyperparams":
        return cls(
            mu0=np.zeros(d),
            lam0=2.0,
            Psi0=np.eye(d),
            nu0=d + 2.0,
            M0=np.zeros((d, d)),
            V0=np.eye(d),
            alpha=np.full(K, 0.2),
        )

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    def validate(self, K: int | None = None):
        d = self.dim
        if self.Psi0.shape != (d, d) or self.M0.shape != (d, d) or self.V0.shape != (d, d):
            raise InputError("hyperparameter matrix shapes disagree with mu0")
        if not self.lam0 > 0:
            raise InputError("lam0 must be positive")
        if not self.nu0 > d - 1:
            raise InputError(f"nu0 must exceed dim - 1 = {d - 1}")
        if not (dist.is_spd(self.Psi0) and dist.is_spd(self.V0)):
            raise InputError("Psi0 and V0 must be symmetric positive definite")
        if np.any(self.alpha <= 0):
            raise InputError("alpha must be positive")
        if K is not None and self.alpha.shape != (K,):
            raise InputError(f"alpha has length {self.alpha.size}, expected K={K}")

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0.tolist(), "lam0": float(self.lam0), "Psi0": self.Psi0.tolist(),
            "nu0": float(self.nu0), "M0": self.M0.tolist(), "V0": self.V0.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Hyperparams":
        return cls(
            mu0=np.asarray(doc["mu0"], float), lam0=float(doc["lam0"]),
            Psi0=np.asarray(doc["Psi0"], float), nu0=float(doc["nu0"]),
            M0=np.asarray(doc["M0"], float), V0=np.asarray(doc["V0"], float),
            alpha=np.asarray(doc["alpha"], float),
        )


@dataclass
class RegimeParams:
    """Per-state VAR(1) parameters and the state transition matrix.

    Shapes: ``pi (K, K)``, ``A (K, d, d)``, ``mu (K, d)``, ``sigma (K, d, d)``.
    """

    pi: NDArray
    A: NDArray
    mu: NDArray
    sigma: NDArray

    def __post_init__(self):
        self.pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        self.A = np.asarray(self.A, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def validate(self, atol: float = 1e-10):
        K, d = self.K, self.dim
        if self.pi.shape != (K, K) or self.A.shape != (K, d, d) or self.sigma.shape != (K, d, d):
            raise InputError("regime parameter shapes are inconsistent")
        if np.any(self.pi < 0) or np.any(np.abs(self.pi.sum(axis=1) - 1) > atol):
            raise InputError("transition rows must be probability vectors")
        for k in range(K):
            if not dist.is_spd(self.sigma[k]):
                raise InputError(f"sigma[{k}] is not symmetric positive definite")

    def relabel(self, perm) -> "RegimeParams":
        """Parameters with new state ``i`` taken from old state ``perm[i]``."""
        perm = np.asarray(perm)
        return RegimeParams(
            pi=self.pi[np.ix_(perm, perm)], A=self.A[perm], mu=self.mu[perm], sigma=self.sigma[perm]
        )

    def copy(self) -> "RegimeParams":
        return RegimeParams(self.pi.copy(), self.A.copy(), self.mu.copy(), self.sigma.copy())


def _irreducible(adj: NDArray) -> bool:
    """Strong connectivity via transitive closure by repeated boolean squaring."""
    R = adj | np.eye(len(adj), dtype=bool)
    for _ in range(int(np.ceil(np.log2(len(adj)))) + 1):
        R = (R.astype(np.int64) @ R.astype(np.int64)) > 0
    return bool(R.all())


def stationary_distribution(pi: ArrayLike, tol: float = 1e-12, max_steps: int = 100_000) -> NDArray:
    """Left fixed point of a row-stochastic matrix.

    Power iteration from the uniform vector, accelerated by repeated squaring
    of the transition matrix (each squaring doubles the step count, capped at
    ``max_steps``). Reducible chains, or chains that fail to converge, fall
    back to the uniform distribution with a ``RuntimeWarning``.
    """
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    K = pi.shape[0]
    uniform = np.full(K, 1.0 / K)
    if K == 1:
        return np.ones(1)
    if not _irreducible(pi > 0):
        warnings.warn("transition matrix is reducible; using uniform initial distribution",
                      RuntimeWarning, stacklevel=2)
        return uniform
    v = uniform
    P = pi.copy()
    steps, stride = 0, 1
    while steps < max_steps:
        v = v @ P
        v /= v.sum()
        steps += stride
        if np.max(np.abs(v @ pi - v)) < tol:
            return v
        P = P @ P
        P /= P.sum(axis=1, keepdims=True)
        stride *= 2
    warnings.warn("stationary distribution did not converge; using uniform", RuntimeWarning,
                  stacklevel=2)
    return uniform


def random_regime(
    d: int,
    K: int,
    rng: np.random.Generator,
    *,
    spectral_radius: float = 0.95,
    mean_separation: float = 3.0,
    stay_prob: float = 0.85,
    noise_scale: float = 0.5,
    coupling: float = 0.0,
    cross_lag: float = 0.0,
    diag_range: tuple[float, float] = (0.2, 0.6),
) -> RegimeParams:
    """Random regime parameters with diagonally dominant, stable coefficient matrices.

    Diagonals of each ``A_k`` are uniform on ``diag_range``, off-diagonals small
    Gaussian, and the matrix is rescaled so its spectral radius is at most
    ``spectral_radius``.
    ``coupling`` in [0, 1) adds a shared factor between matching link-time and
    occupancy entries of the noise covariance. ``cross_lag`` puts extra
    weight on the leader's occupancy in the follower's link time (and vice
    versa). Both only apply when ``d = 2n+1``.
    """
    A = np.empty((K, d, d))
    for k in range(K):
        M = 0.1 * rng.standard_normal((d, d))
        M[np.diag_indices(d)] = rng.uniform(*diag_range, size=d)
        if cross_lag and d >= 3 and d % 2 == 1:
            n = (d - 1) // 2
            M[np.arange(n), n + np.arange(n)] += cross_lag
            M[n + np.arange(n), np.arange(n)] += cross_lag
        rho = np.max(np.abs(np.linalg.eigvals(M)))
        if rho > spectral_radius:
            M *= spectral_radius / rho
        A[k] = M
    mu = mean_separation * rng.standard_normal((K, d)) / np.sqrt(d)
    sigma = np.empty((K, d, d))
    for k in range(K):
        B = rng.standard_normal((d, d)) / np.sqrt(d)
        S = noise_scale**2 * (0.5 * B @ B.T + np.eye(d))
        if coupling > 0 and d >= 3 and d % 2 == 1:
            n = (d - 1) // 2
            for m in range(n):
                c = coupling * np.sqrt(S[m, m] * S[n + m, n + m])
                S[m, n + m] += c
                S[n + m, m] += c
        sigma[k] = S
    pi = np.full((K, K), (1.0 - stay_prob) / max(K - 1, 1))
    np.fill_diagonal(pi, stay_prob if K > 1 else 1.0)
    params = RegimeParams(pi=pi, A=A, mu=mu, sigma=sigma)
    params.validate()
    return params


def _as_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def day_rng(master_seed: int, day_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, day_index]))


@dataclass
class SimulatedData:
    days: list[DaySequence]
    states: list[NDArray]
    first_runs: NDArray = field(repr=False)


def simulate_dataset(
    params: RegimeParams,
    n_days: int,
    runs_per_day: int,
    rng,
    runs_per_period: int | None = None,
) -> SimulatedData:
    """Draw days from the generative model.

    Per day: ``z_1 ~ pi*``, ``y_1 ~ N(mu_{z1}, Sigma_{z1})``, then for later runs
    ``z_i ~ pi[z_{i-1}]`` and ``y_i ~ N(A_{z_i} y_{i-1} + mu_{z_i}, Sigma_{z_i})``.
    ``rng`` is a seed or a Generator; each day draws from its own stream keyed
    by ``(seed, day index)``.
    """
    if runs_per_day < 2:
        raise InputError("runs_per_day must be at least 2")
    master = _as_seed(rng)
    K, d = params.K, params.dim
    init = stationary_distribution(params.pi)
    chols = [dist.cholesky(params.sigma[k]) for k in range(K)]
    days, states = [], []
    for di in range(n_days):
        r = day_rng(master, di)
        z = np.empty(runs_per_day, dtype=int)
        Y = np.empty((runs_per_day, d))
        z[0] = dist.sample_categorical(init, r)
        Y[0] = params.mu[z[0]] + chols[z[0]] @ r.standard_normal(d)
        for i in range(1, runs_per_day):
            z[i] = dist.sample_categorical(params.pi[z[i - 1]], r)
            k = z[i]
            Y[i] = params.A[k] @ Y[i - 1] + params.mu[k] + chols[k] @ r.standard_normal(d)
        periods = None
        if runs_per_period:
            periods = np.arange(runs_per_day) // runs_per_period
        days.append(DaySequence(day_id=f"d{di + 1:03d}", runs=Y, periods=periods))
        states.append(z)
    return SimulatedData(days=days, states=states, first_runs=np.array([day.runs[0] for day in days]))
