"""Data-adaptive spectral kernel learning for Nadaraya-Watson regression.

A Boltzmann machine over Ising spins, mapped to continuous frequencies
through a Gaussian conditional, parameterizes the spectral distribution
of a shift-invariant kernel. Random Fourier features built from sampled
frequencies feed squared-kernel-weight Nadaraya-Watson regression, and
the spectral parameters are trained end-to-end on the leave-one-out
regression error with a score-function gradient.
"""

__version__ = "0.1.0"

from .data import (
    RawTable,
    SplitSpec,
    gaussian_nw_baseline,
    generate_sinc,
    load_csv,
    load_libsvm,
    standardize_apply,
    standardize_fit_transform,
    train_test_split,
)
from .estimator import GaussianNWRegressor, SpectralKernelNWRegressor
from .regression import (
    EndpointRule,
    RegressionDataset,
    endpoint_mask,
    llr_predict,
    loo_nw_predict,
    nw_predict,
    predict_with_endpoint_correction,
    quantile,
    r_squared,
    rmse,
    squared_weights,
)
from .rff import (
    closed_form_kernel,
    closed_form_kernel_matrix,
    feature_map,
    kernel_estimate,
    kernel_matrix,
)
from .spectral_model import (
    BlockGibbsSampler,
    ExactSampler,
    ExternalSampler,
    SpectralModelParams,
    exact_joint_distribution,
    init_params,
    make_backend,
    rbm_energy,
    sample_frequencies,
    visible_marginal,
)
from .training import (
    Adam,
    SGD,
    TrainConfig,
    TrainHistory,
    discrete_score,
    gaussian_score,
    loo_mse_loss,
    loss_kernel_gradient,
    parameter_gradient,
    train,
)

__all__ = [
    "Adam",
    "BlockGibbsSampler",
    "EndpointRule",
    "ExactSampler",
    "ExternalSampler",
    "GaussianNWRegressor",
    "RawTable",
    "RegressionDataset",
    "SGD",
    "SpectralKernelNWRegressor",
    "SpectralModelParams",
    "SplitSpec",
    "TrainConfig",
    "TrainHistory",
    "closed_form_kernel",
    "closed_form_kernel_matrix",
    "discrete_score",
    "endpoint_mask",
    "exact_joint_distribution",
    "feature_map",
    "gaussian_nw_baseline",
    "gaussian_score",
    "generate_sinc",
    "init_params",
    "kernel_estimate",
    "kernel_matrix",
    "llr_predict",
    "load_csv",
    "load_libsvm",
    "loo_mse_loss",
    "loo_nw_predict",
    "loss_kernel_gradient",
    "make_backend",
    "nw_predict",
    "parameter_gradient",
    "predict_with_endpoint_correction",
    "quantile",
    "r_squared",
    "rbm_energy",
    "rmse",
    "sample_frequencies",
    "squared_weights",
    "standardize_apply",
    "standardize_fit_transform",
    "train",
    "train_test_split",
    "visible_marginal",
]
