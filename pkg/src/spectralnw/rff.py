"""Random Fourier features and the exact mixture kernel they estimate.

A frequency set is a plain (S, d) float array, one frequency vector per
row. The cosine-sine feature map phi and the cosine-of-difference
average estimate the same shift-invariant kernel; both forms are
provided and agree to float precision.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError
from .spectral_model import (
    MARGINAL_ENUMERATION_LIMIT,
    SpectralModelParams,
    enumerate_spin_states,
    visible_marginal,
)


def feature_map(x: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Cosine-sine feature map, (1/sqrt(S)) (cos(w_s.x)..., sin(w_s.x)...).

    `x` may be a single d-vector or an (N, d) batch; the feature
    dimension is 2S and every feature vector has unit Euclidean norm.
    """
    x = np.asarray(x, dtype=np.float64)
    omegas = np.asarray(omegas, dtype=np.float64)
    if x.shape[-1] != omegas.shape[1]:
        raise ValueError(f"input has dimension {x.shape[-1]}, frequencies have {omegas.shape[1]}")
    proj = x @ omegas.T
    s = omegas.shape[0]
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1) / np.sqrt(s)


def kernel_estimate(x: np.ndarray, x_other: np.ndarray, omegas: np.ndarray) -> float:
    """Monte Carlo kernel value (1/S) sum_s cos(w_s . (x - x'))."""
    x = np.asarray(x, dtype=np.float64)
    x_other = np.asarray(x_other, dtype=np.float64)
    if x.shape != x_other.shape:
        raise ValueError(f"inputs have shapes {x.shape} and {x_other.shape}")
    omegas = np.asarray(omegas, dtype=np.float64)
    if x.shape[-1] != omegas.shape[1]:
        raise ValueError(f"input has dimension {x.shape[-1]}, frequencies have {omegas.shape[1]}")
    return float(np.mean(np.cos(omegas @ (x - x_other))))


def pair_cosines(X: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """cos(w_s . (x_i - x_j)) for all pairs, as an (N, N, S) array.

    Shared by the kernel matrix and the score-function gradient, which
    reuses the same per-sample cosines.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    omegas = np.asarray(omegas, dtype=np.float64)
    proj = X @ omegas.T  # (N, S)
    diff = proj[:, None, :] - proj[None, :, :]
    return np.cos(diff, out=diff)


def kernel_matrix(X: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Dense RFF kernel matrix over the rows of X.

    Computed through the feature map (O(N^2 S) via BLAS), then
    symmetrized, clipped to [-1, 1] and given an exact unit diagonal;
    those are properties of the underlying cosine average that matrix
    rounding would otherwise only meet approximately.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    phi = feature_map(X, omegas)
    K = phi @ phi.T
    K = 0.5 * (K + K.T)
    np.clip(K, -1.0, 1.0, out=K)
    np.fill_diagonal(K, 1.0)
    return K


def cross_kernel(X_query: np.ndarray, X_train: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Rectangular kernel block k(x_q, x_j) for query rows against training rows."""
    phi_q = feature_map(np.atleast_2d(X_query), omegas)
    phi_t = feature_map(np.atleast_2d(X_train), omegas)
    K = phi_q @ phi_t.T
    return np.clip(K, -1.0, 1.0, out=K)


def validate_kernel_matrix(K: np.ndarray, tol: float = 1e-12) -> None:
    """Checks symmetry, unit diagonal and the [-1, 1] range; raises on failure."""
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"kernel matrix must be square, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel matrix contains non-finite entries")
    if np.max(np.abs(K - K.T)) > tol:
        raise ValueError("kernel matrix is not symmetric")
    if np.max(np.abs(np.diag(K) - 1.0)) > tol:
        raise ValueError("kernel matrix diagonal is not 1")
    if K.min() < -1.0 or K.max() > 1.0:
        raise ValueError("kernel matrix entries fall outside [-1, 1]")


def closed_form_kernel(delta: np.ndarray, params: SpectralModelParams):
    """Exact expectation of cos(w . delta) under the spectral model.

    Marginalizing the Gaussian head with its characteristic function and
    the hidden spins analytically gives the finite mixture

        k(delta) = exp(-0.5 sum_i exp(z_i) delta_i^2)
                   * sum_v P(v) cos((a + U v) . delta),

    evaluated with the exact visible marginal. Test oracle and
    small-model inference path only; the training gradient never calls
    this.
    """
    if params.n_visible > MARGINAL_ENUMERATION_LIMIT:
        raise CapacityError(
            f"closed-form kernel enumerates 2^{params.n_visible} visible states "
            f"(limit 2^{MARGINAL_ENUMERATION_LIMIT})"
        )
    delta = np.asarray(delta, dtype=np.float64)
    single = delta.ndim == 1
    D = np.atleast_2d(delta)
    if D.shape[1] != params.n_omega:
        raise ValueError(f"delta has dimension {D.shape[1]}, expected {params.n_omega}")
    p_v = visible_marginal(params)
    means = params.a[None, :] + enumerate_spin_states(params.n_visible) @ params.U.T
    envelope = np.exp(-0.5 * (D**2) @ params.sigma2)
    mixture = np.cos(D @ means.T) @ p_v
    values = envelope * mixture
    return float(values[0]) if single else values


def closed_form_kernel_matrix(X: np.ndarray, params: SpectralModelParams) -> np.ndarray:
    """Exact kernel matrix over the rows of X; small models only."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        K[i] = closed_form_kernel(X[i][None, :] - X, params)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def save_frequencies_csv(omegas: np.ndarray, path) -> None:
    """Frequency set as CSV, S rows by d columns, full float precision."""
    omegas = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    np.savetxt(path, omegas, delimiter=",", fmt="%.17g")


def load_frequencies_csv(path) -> np.ndarray:
    omegas = np.loadtxt(path, delimiter=",", ndmin=2)
    if omegas.size == 0:
        raise ValueError(f"no frequencies found in {path}")
    return omegas
