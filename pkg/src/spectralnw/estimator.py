"""scikit-learn compatible estimators wrapping the kernel-learning
pipeline, so it drops into Pipeline / GridSearchCV like any regressor.

SpectralKernelNWRegressor learns the spectral distribution on fit and
predicts with fresh random Fourier features; GaussianNWRegressor is the
fixed-kernel baseline with a leave-one-out tuned bandwidth.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import default_bandwidth_grid, gaussian_nw_baseline
from .errors import DegenerateFeatureError
from .regression import (
    EndpointRule,
    RegressionDataset,
    nw_predict,
    predict_with_endpoint_correction,
)
from .spectral_model import make_backend, sample_frequencies
from .training import TrainConfig, iteration_seed_sequence, train

# Tag offsetting prediction-time seeds away from the training iterations.
_PREDICT_SEED_TAG = 2**31


class SpectralKernelNWRegressor(RegressorMixin, BaseEstimator):
    """Nadaraya-Watson regression with a learned spectral kernel.

    fit() standardizes the features, then trains the Boltzmann spectral
    model by minimizing the leave-one-out NW mean squared error with a
    score-function gradient. predict() draws `inference_s` fresh
    frequencies from the trained model (seeded, so predictions are
    deterministic) and applies squared-kernel NW with an optional
    local-linear correction at endpoint queries.
    """

    def __init__(self, n_visible=4, n_hidden=4, iterations=300, learning_rate=0.01,
                 optimizer="adam", reads=None, eps=1e-8, inference_s=2000,
                 llr_endpoints=True, endpoint_alpha=0.01, backend="exact",
                 burn_in=100, thinning=5, baseline_subtraction=False, seed=0):
        self.n_visible = n_visible
        self.n_hidden = n_hidden
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.reads = reads
        self.eps = eps
        self.inference_s = inference_s
        self.llr_endpoints = llr_endpoints
        self.endpoint_alpha = endpoint_alpha
        self.backend = backend
        self.burn_in = burn_in
        self.thinning = thinning
        self.baseline_subtraction = baseline_subtraction
        self.seed = seed

    def _make_backend(self):
        if not isinstance(self.backend, str):
            return self.backend  # already a backend object
        return make_backend(self.backend, burn_in=self.burn_in, thinning=self.thinning)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        if np.any(stds == 0):
            raise DegenerateFeatureError(
                f"constant feature column(s) {np.flatnonzero(stds == 0).tolist()}"
            )
        dataset = RegressionDataset(
            X=(X - means) / stds, y=y,
            feature_means=means, feature_stds=stds, split="train",
        )
        config = TrainConfig(
            iterations=self.iterations, learning_rate=self.learning_rate,
            optimizer=self.optimizer, reads=self.reads, eps_nw=self.eps,
            seed=self.seed, backend=self._make_backend(),
            baseline_subtraction=self.baseline_subtraction,
            n_visible=self.n_visible, n_hidden=self.n_hidden,
        )
        self.params_, self.history_ = train(dataset, config)
        self.feature_means_ = means
        self.feature_stds_ = stds
        self.X_train_ = dataset.X
        self.y_train_ = dataset.y
        self.endpoint_rule_ = EndpointRule.from_training(
            dataset.X, self.endpoint_alpha, 1.0 - self.endpoint_alpha
        )
        self.n_features_in_ = X.shape[1]
        return self

    def sample_frequencies_(self, s: int | None = None, seed_tag: int = 0) -> np.ndarray:
        """Draw frequency vectors from the fitted spectral model."""
        check_is_fitted(self, "params_")
        s = self.inference_s if s is None else s
        ss = iteration_seed_sequence(self.seed, _PREDICT_SEED_TAG + seed_tag)
        rng_spins, rng_freq = (np.random.default_rng(c) for c in ss.spawn(2))
        V, _ = self._make_backend().sample(self.params_, s, rng_spins)
        return sample_frequencies(self.params_, V, rng_freq)

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        X_std = (X - self.feature_means_) / self.feature_stds_
        omegas = self.sample_frequencies_()
        if self.llr_endpoints:
            preds, report = predict_with_endpoint_correction(
                X_std, self.X_train_, self.y_train_, omegas,
                self.eps, self.endpoint_rule_,
            )
            self.last_prediction_report_ = report
            return preds
        return nw_predict(X_std, self.X_train_, self.y_train_, omegas, self.eps)


class GaussianNWRegressor(RegressorMixin, BaseEstimator):
    """Fixed Gaussian-kernel NW baseline with squared weights.

    The bandwidth gamma of k(x, x') = exp(-gamma ||x - x'||^2) is picked
    from a grid by leave-one-out MSE on the training data.
    """

    def __init__(self, bandwidth_grid=None, eps=1e-8):
        self.bandwidth_grid = bandwidth_grid
        self.eps = eps

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        if np.any(stds == 0):
            raise DegenerateFeatureError(
                f"constant feature column(s) {np.flatnonzero(stds == 0).tolist()}"
            )
        dataset = RegressionDataset(
            X=(X - means) / stds, y=y,
            feature_means=means, feature_stds=stds, split="train",
        )
        grid = (default_bandwidth_grid() if self.bandwidth_grid is None
                else np.asarray(self.bandwidth_grid, dtype=np.float64))
        # reuse the baseline routine for selection; test metrics discarded
        result = gaussian_nw_baseline(dataset, dataset, grid, self.eps)
        self.gamma_ = result["gamma"]
        self.loo_mse_ = result["loo_mse"]
        self.feature_means_ = means
        self.feature_stds_ = stds
        self.X_train_ = dataset.X
        self.y_train_ = dataset.y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "gamma_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        X_std = (X - self.feature_means_) / self.feature_stds_
        diff = X_std[:, None, :] - self.X_train_[None, :, :]
        K = np.exp(-self.gamma_ * np.einsum("ijk,ijk->ij", diff, diff))
        W = K * K
        return (W @ self.y_train_) / (W.sum(axis=1) + self.eps)
