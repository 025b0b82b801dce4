"""End-to-end kernel learning from the leave-one-out regression error.

Each iteration draws spin states from the sampler backend, maps them to
frequencies, rebuilds the training kernel from those frequencies, and
updates the spectral parameters with a score-function (likelihood-ratio)
gradient of the LOO Nadaraya-Watson mean squared error.

The gradient factorizes as

    dL/dtheta = sum_{i != j} dL/dk_ij * (1/S) sum_s
                [cos(w_s.(x_i - x_j)) - beta_s] * dlog p(w_s, v_s, h_s)/dtheta

where the per-sample score splits into a self-normalized Gaussian part
for {a, U, z} and a Boltzmann part for {b, c, W} whose model expectation
is approximated by the batch average over the same samples. beta_s is an
optional leave-one-out control variate, zero by default.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import NumericError
from .regression import RegressionDataset, loo_nw_predict, squared_weights
from .rff import pair_cosines
from .spectral_model import (
    ExactSampler,
    SpectralModelParams,
    init_params,
    sample_frequencies,
)

PARAM_BLOCKS = ("a", "b", "c", "U", "W", "z")


# ---------------------------------------------------------------------------
# Loss and its kernel-space gradient


def loo_mse_loss(K: np.ndarray, y: np.ndarray, eps: float) -> float:
    """Mean squared error of the leave-one-out NW predictions.

    Rows of K are used independently (prediction i reads row i only), so
    the value is well defined even for a perturbed, non-symmetric matrix;
    the gradient check below relies on that.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = loo_nw_predict(squared_weights(K), y, eps)
    return float(np.mean((y - y_hat) ** 2))


def loss_kernel_gradient(K: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """dL/dk_ij for every ordered pair i != j (diagonal is zero).

    With w_ij = k_ij^2, A_i = sum_{j!=i} w_ij y_j, B_i = sum_{j!=i} w_ij:

        dL/dk_ij = -(2/N) (y_i - yhat_i) (y_j - yhat_i) / (B_i + eps) * 2 k_ij

    where w_ij only enters prediction i, so entry (i, j) of the result
    is the sensitivity through row i alone.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    W = squared_weights(K)
    np.fill_diagonal(W, 0.0)
    B = W.sum(axis=1)
    y_hat = (W @ y) / (B + eps)
    n = y.size
    coef = -(2.0 / n) * (y - y_hat) / (B + eps)  # per-row factor
    G = coef[:, None] * (y[None, :] - y_hat[:, None]) * (2.0 * K)
    np.fill_diagonal(G, 0.0)
    return G


# ---------------------------------------------------------------------------
# Score functions


def gaussian_score(omegas: np.ndarray, visibles: np.ndarray,
                   params: SpectralModelParams) -> dict[str, np.ndarray]:
    """Per-sample gradients of log N(omega | a + U v, exp(z)) in {a, U, z}.

    The conditional is self-normalized, so no model-expectation term
    appears; the -1/2 in the z score comes from differentiating the
    log-normalizer. Returns arrays with a leading sample axis.
    """
    omegas = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    V = np.atleast_2d(np.asarray(visibles, dtype=np.float64))
    if omegas.shape[0] != V.shape[0]:
        raise ValueError(f"{omegas.shape[0]} frequencies but {V.shape[0]} visible states")
    if omegas.shape[1] != params.n_omega or V.shape[1] != params.n_visible:
        raise ValueError("sample dimensions do not match the model")
    sigma2 = params.sigma2
    resid = omegas - (params.a[None, :] + V @ params.U.T)
    scaled = resid / sigma2[None, :]
    return {
        "a": scaled,
        "U": scaled[:, :, None] * V[:, None, :],
        "z": 0.5 * (resid * scaled - 1.0),
    }


@dataclass
class SpinMoments:
    """First and second moments of spin states under some distribution."""

    mean_v: np.ndarray
    mean_h: np.ndarray
    mean_vh: np.ndarray


def batch_spin_moments(V: np.ndarray, H: np.ndarray) -> SpinMoments:
    """Empirical moments of a batch of joint samples."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if V.shape[0] != H.shape[0]:
        raise ValueError("visible and hidden batches differ in length")
    if V.shape[0] == 0:
        raise ValueError("empty batch")
    n = V.shape[0]
    return SpinMoments(V.mean(axis=0), H.mean(axis=0), V.T @ H / n)


def exact_spin_moments(params: SpectralModelParams) -> SpinMoments:
    """Moments under the exact Boltzmann distribution (enumeration oracle)."""
    from .spectral_model import enumerate_spin_states, exact_joint_distribution

    probs = exact_joint_distribution(params)
    V_all = enumerate_spin_states(params.n_visible)
    H_all = enumerate_spin_states(params.n_hidden)
    P = probs.reshape(2**params.n_hidden, 2**params.n_visible)  # [h_idx, v_idx]
    p_v = P.sum(axis=0)
    p_h = P.sum(axis=1)
    mean_vh = V_all.T @ P.T @ H_all
    return SpinMoments(p_v @ V_all, p_h @ H_all, mean_vh)


def discrete_score(V: np.ndarray, H: np.ndarray,
                   moments: SpinMoments | None = None) -> dict[str, np.ndarray]:
    """Per-sample Boltzmann scores for {b, c, W}.

    score_b = v - <v>, score_c = h - <h>, score_W = v h^T - <v h^T>;
    the expectation defaults to the batch average over (V, H) itself,
    the Monte Carlo surrogate for the model expectation -d log Z.
    """
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if moments is None:
        moments = batch_spin_moments(V, H)
    return {
        "b": V - moments.mean_v[None, :],
        "c": H - moments.mean_h[None, :],
        "W": V[:, :, None] * H[:, None, :] - moments.mean_vh[None, :, :],
    }


# ---------------------------------------------------------------------------
# Full parameter gradient


def _pair_weights(C: np.ndarray, G: np.ndarray, baseline_subtraction: bool) -> np.ndarray:
    """f_s = sum_{ij} G_ij (cos_ijs - beta_ijs), vectorized over samples.

    The leave-one-out baseline beta_s(ij) = mean_{s' != s} cos_ijs'
    collapses to a rescaling around the per-pair mean, which keeps this
    O(N^2 S) with no extra memory.
    """
    n = G.shape[0]
    S = C.shape[2]
    f = G.ravel() @ C.reshape(n * n, S)
    if baseline_subtraction:
        if S < 2:
            raise ValueError("baseline subtraction needs at least 2 samples")
        pair_mean = C.mean(axis=2)
        f = (S / (S - 1.0)) * (f - float(np.sum(G * pair_mean)))
    return f


def parameter_gradient(K: np.ndarray, y: np.ndarray, eps: float,
                       omegas: np.ndarray, V: np.ndarray, H: np.ndarray,
                       X: np.ndarray, params: SpectralModelParams,
                       baseline_subtraction: bool = False,
                       return_contributions: bool = False):
    """Score-function estimate of dL/dtheta for every parameter block.

    `omegas`, `V` and `H` must be aligned row-for-row (each frequency was
    generated from its visible state); K is the kernel matrix the loss
    gradient is evaluated at, normally the Monte Carlo kernel built from
    the same frequencies.

    With return_contributions=True also returns per-sample contribution
    arrays whose mean is the gradient, for Monte Carlo error bars.
    """
    omegas = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if not (omegas.shape[0] == V.shape[0] == H.shape[0]):
        raise ValueError(
            f"misaligned sample lists: {omegas.shape[0]} frequencies, "
            f"{V.shape[0]} visible, {H.shape[0]} hidden states"
        )
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = pair_cosines(X, omegas)
    G = loss_kernel_gradient(K, y, eps)
    return _gradient_from_cosines(C, G, omegas, V, H, params,
                                  baseline_subtraction, return_contributions)


def _gradient_from_cosines(C: np.ndarray, G: np.ndarray, omegas: np.ndarray,
                           V: np.ndarray, H: np.ndarray,
                           params: SpectralModelParams,
                           baseline_subtraction: bool,
                           return_contributions: bool = False):
    S = omegas.shape[0]
    f = _pair_weights(C, G, baseline_subtraction)
    g_score = gaussian_score(omegas, V, params)
    d_score = discrete_score(V, H)
    grads = {
        "a": (f @ g_score["a"]) / S,
        "U": np.einsum("s,sij->ij", f, g_score["U"]) / S,
        "z": (f @ g_score["z"]) / S,
        "b": (f @ d_score["b"]) / S,
        "c": (f @ d_score["c"]) / S,
        "W": np.einsum("s,sij->ij", f, d_score["W"]) / S,
    }
    if not return_contributions:
        return grads
    contributions = {
        name: f.reshape((S,) + (1,) * (arr.ndim - 1)) * arr
        for name, arr in {**g_score, **d_score}.items()
    }
    return grads, contributions


# ---------------------------------------------------------------------------
# Optimizers


class SGD:
    """Plain gradient descent."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: SpectralModelParams, grads: dict[str, np.ndarray]) -> SpectralModelParams:
        return SpectralModelParams(**{
            name: arr - self.learning_rate * grads[name]
            for name, arr in params.blocks().items()
        })


class Adam:
    """Adam with bias correction; robust default for noisy score gradients."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] | None = None
        self.v: dict[str, np.ndarray] | None = None

    def step(self, params: SpectralModelParams, grads: dict[str, np.ndarray]) -> SpectralModelParams:
        if self.m is None:
            self.m = {name: np.zeros_like(arr) for name, arr in params.blocks().items()}
            self.v = {name: np.zeros_like(arr) for name, arr in params.blocks().items()}
        self.t += 1
        updated = {}
        for name, arr in params.blocks().items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            updated[name] = arr - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return SpectralModelParams(**updated)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainConfig:
    """Knobs of the training loop.

    reads is the number of sampler reads (and frequencies) per
    iteration; None means ceil(n_train / 2). n_visible / n_hidden size
    the RBM when parameters are initialized internally.
    """

    iterations: int = 300
    learning_rate: float = 0.01
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reads: int | None = None
    eps_nw: float = 1e-8
    seed: int = 0
    backend: object = None  # defaults to ExactSampler()
    baseline_subtraction: bool = False
    n_visible: int = 4
    n_hidden: int = 4
    init_scale: float = 0.1
    kernel_snapshot_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reads is not None and self.reads < 2:
            raise ValueError("reads must be >= 2")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norms: dict[str, float]
    millis: float


@dataclass
class TrainHistory:
    """Per-iteration loss/gradient trace plus parameter snapshots."""

    records: list[IterationRecord] = dataclass_field(default_factory=list)
    params_init: SpectralModelParams | None = None
    params_final: SpectralModelParams | None = None
    kernel_snapshots: dict[int, np.ndarray] = dataclass_field(default_factory=dict)

    @property
    def losses(self) -> np.ndarray:
        return np.array([rec.loss for rec in self.records])

    def save_csv(self, path, deterministic_timing: bool = False) -> None:
        """History table; deterministic_timing zeroes the wall-time column
        so repeated runs with equal seeds produce byte-identical files."""
        lines = ["iteration,loss,grad_norm_a,grad_norm_b,grad_norm_c,"
                 "grad_norm_U,grad_norm_W,grad_norm_z,millis"]
        for rec in self.records:
            norms = ",".join(repr(rec.grad_norms[name]) for name in PARAM_BLOCKS)
            millis = 0.0 if deterministic_timing else rec.millis
            lines.append(f"{rec.iteration},{rec.loss!r},{norms},{millis!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def iteration_seed_sequence(seed: int, iteration: int) -> np.random.SeedSequence:
    """Deterministic per-iteration seed stream; iteration 0 is the
    parameter initialization, training iterations start at 1."""
    return np.random.SeedSequence((seed, iteration))


def train(dataset: RegressionDataset, config: TrainConfig,
          params_init: SpectralModelParams | None = None):
    """Run the kernel-learning loop on a training split.

    Returns (final_params, history). All randomness is derived from
    config.seed: iteration t uses two generators spawned from
    (seed, t), one for the sampler backend and one for the Gaussian
    frequency draw, so runs are bit-reproducible.
    """
    X, y = dataset.X, dataset.y
    n_train = y.size
    if n_train < 2:
        raise ValueError("training needs at least 2 points")
    reads = config.reads if config.reads is not None else max(2, math.ceil(n_train / 2))
    backend = config.backend if config.backend is not None else ExactSampler()

    if params_init is None:
        rng_init = np.random.default_rng(iteration_seed_sequence(config.seed, 0))
        params = init_params(dataset.d, config.n_visible, config.n_hidden,
                             rng=rng_init, scale=config.init_scale)
    else:
        if params_init.n_omega != dataset.d:
            raise ValueError(
                f"params expect {params_init.n_omega} features, data has {dataset.d}"
            )
        params = params_init.copy()

    if config.optimizer == "adam":
        optimizer = Adam(config.learning_rate, config.adam_beta1,
                         config.adam_beta2, config.adam_eps)
    else:
        optimizer = SGD(config.learning_rate)

    history = TrainHistory(params_init=params.copy())
    for t in range(1, config.iterations + 1):
        t_start = time.perf_counter()
        rng_spins, rng_freq = (
            np.random.default_rng(child)
            for child in iteration_seed_sequence(config.seed, t).spawn(2)
        )
        V, H = backend.sample(params, reads, rng_spins)
        omegas = sample_frequencies(params, V, rng_freq)

        C = pair_cosines(X, omegas)
        K = C.mean(axis=2)
        loss = loo_mse_loss(K, y, config.eps_nw)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {t}")
        G = loss_kernel_gradient(K, y, config.eps_nw)
        grads = _gradient_from_cosines(C, G, omegas, V, H, params,
                                       config.baseline_subtraction)
        params = optimizer.step(params, grads)
        for name, arr in params.blocks().items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in block {name!r} at iteration {t}")

        millis = (time.perf_counter() - t_start) * 1000.0
        history.records.append(IterationRecord(
            iteration=t,
            loss=loss,
            grad_norms={name: float(np.linalg.norm(g)) for name, g in grads.items()},
            millis=millis,
        ))
        if config.kernel_snapshot_every and t % config.kernel_snapshot_every == 0:
            history.kernel_snapshots[t] = K.copy()

    history.params_final = params.copy()
    return params, history
