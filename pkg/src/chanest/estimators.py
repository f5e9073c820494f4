"""Classical channel estimators: LS, LMMSE and the empirical-covariance MMSE bound."""

from __future__ import annotations

import math

import numpy as np

from .mimo import ChannelModelConfig, channel_correlation, unvec, vec

__all__ = ["ls_estimate", "lmmse_estimate", "mmse_oracle", "nmse", "nmse_db"]


def ls_estimate(received: np.ndarray, pilots: np.ndarray) -> np.ndarray:
    """Least-squares estimate H = Y X^H (X X^H)^{-1}."""
    gram = pilots @ pilots.conj().T
    n_tx = pilots.shape[0]
    if np.linalg.matrix_rank(gram) < n_tx:
        raise ValueError("pilot Gram matrix X X^H is rank deficient; LS is undefined")
    rhs = received @ pilots.conj().T
    # right-division: H gram = rhs  <=>  gram^T H^T = rhs^T
    return np.linalg.solve(gram.T, rhs.T).T


def _orthogonality_constant(pilots: np.ndarray) -> float | None:
    """L such that X X^H = L I, or None when the pilots are not orthogonal."""
    gram = pilots @ pilots.conj().T
    c = float(np.trace(gram).real) / pilots.shape[0]
    if c <= 0:
        return None
    if np.max(np.abs(gram - c * np.eye(pilots.shape[0]))) <= 1e-10 * max(1.0, c):
        return c
    return None


def lmmse_estimate(received: np.ndarray, pilots: np.ndarray, corr: np.ndarray,
                   noise_var: float) -> np.ndarray:
    """LMMSE estimate from the channel correlation matrix.

    Implements vec(H_e) = R A^H (A R A^H + sigma^2 I)^{-1} vec(Y) with
    A = X^T kron I.  For orthogonal pilots (X X^H = L I) the LS estimate is
    a sufficient statistic and the identical estimate is obtained from the
    much smaller system R (R + sigma^2/L I)^{-1} vec(H_ls), which is the
    path taken whenever it applies.
    """
    n_rx, pilot_len = received.shape
    n_tx = pilots.shape[0]
    dim = n_rx * n_tx
    if corr.shape != (dim, dim):
        raise ValueError(f"correlation matrix must be {dim}x{dim}, got {corr.shape}")
    if np.max(np.abs(corr - corr.conj().T)) > 1e-8:
        raise ValueError("correlation matrix is not Hermitian")
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")

    ortho = _orthogonality_constant(pilots)
    if ortho is not None:
        h_ls = vec(ls_estimate(received, pilots))
        shrunk = np.linalg.solve(corr + (noise_var / ortho) * np.eye(dim), h_ls)
        return unvec(corr @ shrunk, n_rx, n_tx)

    a = np.kron(pilots.T, np.eye(n_rx))
    ra_h = corr @ a.conj().T
    gram = a @ ra_h + noise_var * np.eye(n_rx * pilot_len)
    return unvec(ra_h @ np.linalg.solve(gram, vec(received)), n_rx, n_tx)


def mmse_oracle(received: np.ndarray, pilots: np.ndarray, cfg: ChannelModelConfig,
                noise_var: float, n_cov_samples: int,
                rng: np.random.Generator) -> np.ndarray:
    """LMMSE with the covariance estimated from fresh draws of the channel model.

    For Gaussian path gains this is the Bayes-optimal linear estimator, which
    is what makes it usable as a performance bound.
    """
    corr = channel_correlation(cfg, n_cov_samples, rng)
    return lmmse_estimate(received, pilots, corr, noise_var)


def nmse(estimate: np.ndarray, channel: np.ndarray) -> float:
    """||H_e - H||_F^2 / ||H||_F^2."""
    if estimate.shape != channel.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {channel.shape}")
    denom = float(np.vdot(channel, channel).real)
    if denom == 0.0:
        raise ValueError("reference channel is identically zero")
    diff = estimate - channel
    return float(np.vdot(diff, diff).real) / denom


def nmse_db(value: float) -> float:
    return 10.0 * math.log10(value)
