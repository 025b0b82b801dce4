"""Nadaraya-Watson regression with squared-kernel weights, plus the
local-linear endpoint correction and the evaluation metrics.

Weights are always the elementwise square of the kernel: squaring keeps
them nonnegative under finite-sample Fourier noise, so the NW
denominator cannot cancel to zero. Every denominator additionally
carries a small stabilizer eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rff import cross_kernel


DEFAULT_EPS = 1e-8
LLR_RIDGE = 1e-8
LLR_COND_MAX = 1e12


@dataclass
class RegressionDataset:
    """Standardized inputs with raw-scale targets.

    X holds features already standardized with the *training* statistics
    stored in feature_means / feature_stds; y is untouched.
    """

    X: np.ndarray
    y: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64).ravel()
        self.feature_stds = np.asarray(self.feature_stds, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"{self.X.shape[0]} rows but {self.y.size} targets")
        if self.feature_stds.size != self.X.shape[1] or self.feature_means.size != self.X.shape[1]:
            raise ValueError("feature statistics do not match the feature dimension")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature_stds must all be positive")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class EndpointRule:
    """Per-feature quantile band; queries outside it get the LLR correction."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64).ravel()
        self.upper = np.asarray(self.upper, dtype=np.float64).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper quantiles must have equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower quantile exceeds upper quantile")

    @classmethod
    def from_training(cls, X: np.ndarray, lower_alpha: float = 0.01,
                      upper_alpha: float = 0.99) -> "EndpointRule":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(
            lower=np.quantile(X, lower_alpha, axis=0),
            upper=np.quantile(X, upper_alpha, axis=0),
        )


def quantile(values: np.ndarray, alpha: float) -> float:
    """Linear-interpolation quantile between order statistics (type 7)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot take a quantile of an empty vector")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return float(np.quantile(values, alpha))


def endpoint_mask(X_query: np.ndarray, rule: EndpointRule) -> np.ndarray:
    """True where any coordinate lies at or beyond the quantile band.

    Boundary comparisons are inclusive, so a query exactly at a
    threshold counts as an endpoint.
    """
    X_query = np.atleast_2d(np.asarray(X_query, dtype=np.float64))
    if X_query.shape[1] != rule.lower.size:
        raise ValueError(f"queries have dimension {X_query.shape[1]}, rule has {rule.lower.size}")
    return np.any((X_query <= rule.lower[None, :]) | (X_query >= rule.upper[None, :]), axis=1)


# ---------------------------------------------------------------------------
# Nadaraya-Watson prediction


def squared_weights(K: np.ndarray) -> np.ndarray:
    """Elementwise squared-kernel weights w_ij = k_ij^2."""
    K = np.asarray(K, dtype=np.float64)
    return K * K


def loo_nw_predict(weights: np.ndarray, y: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Leave-one-out NW predictions on a training weight matrix.

    yhat_i = sum_{j != i} w_ij y_j / (sum_{j != i} w_ij + eps); the
    self-weight is excluded by zeroing the diagonal, and rows are used
    as given (no symmetrization) so each prediction depends only on its
    own row.
    """
    W = np.array(weights, dtype=np.float64, copy=True)
    y = np.asarray(y, dtype=np.float64).ravel()
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"weights must be square, got shape {W.shape}")
    if W.shape[0] != y.size:
        raise ValueError(f"{W.shape[0]} weight rows but {y.size} targets")
    if W.shape[0] < 2:
        raise ValueError("leave-one-out prediction needs at least 2 points")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    np.fill_diagonal(W, 0.0)
    return (W @ y) / (W.sum(axis=1) + eps)


def nw_predict(X_query: np.ndarray, X_train: np.ndarray, y_train: np.ndarray,
               omegas: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Squared-kernel NW prediction at query points.

    A query that coincides with a training point keeps that point's
    unit self-weight; leave-one-out behaviour is only for the training
    objective (see loo_nw_predict).
    """
    y_train = np.asarray(y_train, dtype=np.float64).ravel()
    if y_train.size == 0:
        raise ValueError("empty training set")
    single = np.asarray(X_query).ndim == 1
    Kq = cross_kernel(X_query, X_train, omegas)
    W = Kq * Kq
    pred = (W @ y_train) / (W.sum(axis=1) + eps)
    return float(pred[0]) if single else pred


# ---------------------------------------------------------------------------
# Local linear regression


def _llr_one(x_star: np.ndarray, X_train: np.ndarray, y_train: np.ndarray,
             w: np.ndarray, ridge: float, cond_max: float):
    """Weighted least-squares intercept at one query; returns (value, ok)."""
    Xc = X_train - x_star[None, :]
    A = np.concatenate([np.ones((Xc.shape[0], 1)), Xc], axis=1)
    Aw = A * w[:, None]
    M = A.T @ Aw
    M_ridged = M.copy()
    M_ridged[1:, 1:] += ridge * np.eye(Xc.shape[1])
    try:
        cond = np.linalg.cond(M_ridged)
        if not np.isfinite(cond) or cond > cond_max:
            return 0.0, False
        rhs = Aw.T @ y_train
        beta = np.linalg.solve(M_ridged, rhs)
        # one refinement step against the unridged system: removes the
        # O(ridge) bias on well-posed problems, leaves singular ones to
        # the ridge
        beta += np.linalg.solve(M_ridged, rhs - M @ beta)
    except np.linalg.LinAlgError:
        return 0.0, False
    return float(beta[0]), True


def llr_predict(X_query: np.ndarray, X_train: np.ndarray, y_train: np.ndarray,
                omegas: np.ndarray, eps: float = DEFAULT_EPS,
                ridge: float = LLR_RIDGE, cond_max: float = LLR_COND_MAX,
                weights: np.ndarray | None = None):
    """Local linear prediction with squared-kernel weights.

    Fits y ~ beta0 + beta . (x - x_star) by weighted least squares over
    all training points and returns the intercept. The normal equations
    carry a ridge term on the slope block only; if the system is still
    numerically singular the query falls back to the NW prediction.

    Returns (predictions, fallback_mask); `weights` can override the
    kernel-derived weights (one row per query), mainly for testing.
    """
    X_query = np.atleast_2d(np.asarray(X_query, dtype=np.float64))
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    y_train = np.asarray(y_train, dtype=np.float64).ravel()
    if weights is None:
        Kq = cross_kernel(X_query, X_train, omegas)
        weights = Kq * Kq
    else:
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    preds = np.empty(X_query.shape[0])
    fallback = np.zeros(X_query.shape[0], dtype=bool)
    for q in range(X_query.shape[0]):
        value, ok = _llr_one(X_query[q], X_train, y_train, weights[q], ridge, cond_max)
        if ok:
            preds[q] = value
        else:
            fallback[q] = True
            preds[q] = (weights[q] @ y_train) / (weights[q].sum() + eps)
    return preds, fallback


@dataclass
class PredictionReport:
    """Bookkeeping from an endpoint-corrected prediction pass."""

    n_queries: int
    n_endpoint_queries: int
    n_llr_fallbacks: int


def predict_with_endpoint_correction(X_query: np.ndarray, X_train: np.ndarray,
                                     y_train: np.ndarray, omegas: np.ndarray,
                                     eps: float, rule: EndpointRule):
    """NW prediction with LLR substituted at endpoint queries.

    Returns (predictions, PredictionReport). A query is an endpoint when
    any coordinate falls in the outer quantile tails of the training
    marginals; those queries get the local-linear intercept instead of
    the NW average, unless the local system degenerates and falls back.
    """
    X_query = np.atleast_2d(np.asarray(X_query, dtype=np.float64))
    mask = endpoint_mask(X_query, rule)
    preds = np.empty(X_query.shape[0])
    if np.any(~mask):
        preds[~mask] = nw_predict(X_query[~mask], X_train, y_train, omegas, eps)
    n_fallbacks = 0
    if np.any(mask):
        llr_vals, fell_back = llr_predict(X_query[mask], X_train, y_train, omegas, eps)
        preds[mask] = llr_vals
        n_fallbacks = int(fell_back.sum())
    report = PredictionReport(
        n_queries=X_query.shape[0],
        n_endpoint_queries=int(mask.sum()),
        n_llr_fallbacks=n_fallbacks,
    )
    return preds, report


# ---------------------------------------------------------------------------
# Metrics


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < 2:
        raise ValueError("need at least 2 values")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def rmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Root mean squared error."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < 2:
        raise ValueError("need at least 2 values")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def metrics_report(dataset: str, split: str, n_features_s: int, r2: float,
                   rmse_value: float, n_endpoint_queries: int = 0,
                   n_llr_fallbacks: int = 0) -> dict:
    """The JSON metrics object emitted by evaluation runs."""
    return {
        "dataset": dataset,
        "split": split,
        "S": int(n_features_s),
        "r2": float(r2),
        "rmse": float(rmse_value),
        "n_endpoint_queries": int(n_endpoint_queries),
        "n_llr_fallbacks": int(n_llr_fallbacks),
    }
