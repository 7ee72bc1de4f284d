"""Sampling and density primitives for the Gaussian building blocks of the model.

Every solve goes through a Cholesky factor; nothing here forms an explicit
matrix inverse. All samplers take an explicit ``numpy.random.Generator`` and
are deterministic given its state.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve, solve_triangular

from .errors import (
    DegreesOfFreedomTooSmall,
    EmptyComplement,
    NonPositiveConcentration,
    NotPositiveDefinite,
    ObservedBlockSingular,
)

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
LOG_2PI = np.log(2.0 * np.pi)


def cholesky(S: ArrayLike) -> NDArray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    If the plain factorization fails, ``eps * trace(S) / dim * I`` is added
    for each ``eps`` in ``JITTER_LADDER`` before giving up.

    Raises
    ------
    NotPositiveDefinite
        If every rung of the jitter ladder fails.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise NotPositiveDefinite(f"expected a non-empty square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    dim = S.shape[0]
    scale = np.trace(S) / dim
    if scale <= 0:
        raise NotPositiveDefinite("matrix has non-positive mean diagonal")
    eye = np.eye(dim)
    for eps in JITTER_LADDER:
        try:
            return np.linalg.cholesky(S + eps * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(f"Cholesky failed after jitter up to {JITTER_LADDER[-1]:g}")


def is_spd(S: ArrayLike, rtol: float = 1e-10) -> bool:
    """Symmetric within ``rtol`` (relative to max abs entry) and Cholesky-factorizable."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.all(np.isfinite(S)):
        return False
    scale = max(np.max(np.abs(S)), 1e-300)
    if np.max(np.abs(S - S.T)) > rtol * scale:
        return False
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def mvn_logpdf_chol(x: ArrayLike, mean: ArrayLike, L: NDArray) -> NDArray | float:
    """Log density given a precomputed lower Cholesky factor ``L`` of the covariance.

    ``x`` may be a single vector or a stack of row vectors.
    """
    x = np.asarray(x, dtype=float)
    r = x - np.asarray(mean, dtype=float)
    d = L.shape[0]
    z = solve_triangular(L, np.atleast_2d(r).T, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (np.sum(z * z, axis=0) + logdet + d * LOG_2PI)
    return float(out[0]) if r.ndim == 1 else out


def mvn_logpdf(x: ArrayLike, mean: ArrayLike, cov: ArrayLike) -> NDArray | float:
    """Log of the multivariate normal density ``N(x | mean, cov)``."""
    return mvn_logpdf_chol(x, mean, cholesky(cov))


def sample_mvn(mean: ArrayLike, cov: ArrayLike, rng: np.random.Generator) -> NDArray:
    """One draw ``mean + L @ z`` with ``z`` standard normal."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    return mean + L @ rng.standard_normal(mean.shape[0])


def sample_inverse_wishart(Psi: ArrayLike, nu: float, rng: np.random.Generator) -> NDArray:
    """Draw from the inverse-Wishart with scale ``Psi`` and ``nu`` degrees of freedom.

    Uses the Bartlett factor ``B`` of a Wishart(I, nu) draw: with
    ``Psi = L L^T`` the result is ``L B^{-T} B^{-1} L^T``.
    """
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    d = Psi.shape[0]
    if not nu > d - 1:
        raise DegreesOfFreedomTooSmall(f"need nu > dim - 1 = {d - 1}, got {nu}")
    L = cholesky(Psi)
    B = np.zeros((d, d))
    B[np.diag_indices(d)] = np.sqrt(rng.chisquare(nu - np.arange(d)))
    tril = np.tril_indices(d, -1)
    B[tril] = rng.standard_normal(len(tril[0]))
    W = solve_triangular(B, L.T, lower=True, check_finite=False)
    S = W.T @ W
    return 0.5 * (S + S.T)


def sample_matrix_normal(M: ArrayLike, U: ArrayLike, V: ArrayLike, rng: np.random.Generator) -> NDArray:
    """Draw ``X ~ MN(M, U, V)``: row covariance ``U``, column covariance ``V``.

    ``vec(X - M)`` (column stacking) has covariance ``kron(V, U)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Lu = cholesky(U)
    Lv = cholesky(V)
    Z = rng.standard_normal(M.shape)
    return M + Lu @ Z @ Lv.T


def sample_dirichlet(alpha: ArrayLike, rng: np.random.Generator) -> NDArray:
    """Dirichlet draw from normalized Gamma variates.

    Gammas are drawn in log space (``G(a) = G(a+1) * U**(1/a)``) so tiny
    concentrations cannot underflow to an all-zero vector.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0 or not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
        raise NonPositiveConcentration(f"concentrations must be positive and finite, got {alpha}")
    log_g = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.size)) / alpha
    p = np.exp(log_g - log_g.max())
    return p / p.sum()


def sample_categorical(p: ArrayLike, rng: np.random.Generator) -> int:
    """Index drawn with probabilities ``p`` (assumed normalized)."""
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def _index_array(idx, dim: int) -> NDArray:
    idx = np.asarray(idx)
    if idx.dtype == bool:
        if idx.shape != (dim,):
            raise IndexError(f"boolean mask has shape {idx.shape}, expected ({dim},)")
        return np.flatnonzero(idx)
    idx = idx.astype(int).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"indices out of range for dimension {dim}")
    if np.unique(idx).size != idx.size:
        raise IndexError("duplicate indices")
    return idx


def gaussian_condition(mean: ArrayLike, cov: ArrayLike, observed_idx, observed_vals: ArrayLike):
    """Condition ``N(mean, cov)`` on the entries ``observed_idx`` taking ``observed_vals``.

    Returns the conditional mean and covariance of the remaining entries (in
    increasing index order). An empty observed set returns the marginal of all
    entries.

    Raises
    ------
    EmptyComplement
        If every dimension is observed.
    ObservedBlockSingular
        If the observed block cannot be factorized even with jitter.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[0]
    obs = _index_array(observed_idx, d)
    free = np.setdiff1d(np.arange(d), obs)
    if free.size == 0:
        raise EmptyComplement("all dimensions are observed; nothing to condition")
    vals = np.asarray(observed_vals, dtype=float).ravel()
    if vals.size != obs.size:
        raise IndexError(f"{obs.size} observed indices but {vals.size} values")
    if obs.size == 0:
        return mean.copy(), cov.copy()
    try:
        Lo = cholesky(cov[np.ix_(obs, obs)])
    except NotPositiveDefinite as exc:
        raise ObservedBlockSingular(str(exc)) from exc
    C_fo = cov[np.ix_(free, obs)]
    cond_mean = mean[free] + C_fo @ cho_solve((Lo, True), vals - mean[obs], check_finite=False)
    W = solve_triangular(Lo, C_fo.T, lower=True, check_finite=False)
    cond_cov = cov[np.ix_(free, free)] - W.T @ W
    return cond_mean, 0.5 * (cond_cov + cond_cov.T)


def gaussian_marginal(mean: ArrayLike, cov: ArrayLike, idx):
    """Mean and covariance of the sub-vector ``idx``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    sel = _index_array(idx, mean.shape[0])
    if sel.size == 0:
        raise IndexError("marginal over an empty index set")
    return mean[sel].copy(), cov[np.ix_(sel, sel)].copy()
