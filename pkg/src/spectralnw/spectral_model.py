"""Boltzmann-machine spectral distribution over kernel frequencies.

The discrete part is a restricted Boltzmann machine on Ising spins
v in {-1,+1}^n_visible, h in {-1,+1}^n_hidden with energy

    E(v, h) = - b.v - c.h - v^T W h

and the continuous part maps a visible configuration to an independent
Gaussian over frequency space, omega_i ~ N(a_i + (U v)_i, exp(z_i)).
Spin encoding is {-1,+1} throughout; there is no 0/1 form anywhere.

Spin configurations are indexed little-endian: state index k encodes
spin j as bit j of k, with bit 0 -> spin -1 and bit 1 -> spin +1.
Joint states are indexed as v_index + 2**n_visible * h_index.
"""

from __future__ import annotations

import json
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CapacityError, SamplerProtocolError

# Enumeration bounds: the joint table has 2**(n_visible + n_hidden) entries,
# the visible marginal 2**n_visible.
EXACT_ENUMERATION_LIMIT = 24
MARGINAL_ENUMERATION_LIMIT = 20


@dataclass
class SpectralModelParams:
    """All learnable parameters of the spectral model.

    a : (n_omega,) Gaussian mean offsets
    b : (n_visible,) visible biases
    c : (n_hidden,) hidden biases
    U : (n_omega, n_visible) spin-to-mean couplings
    W : (n_visible, n_hidden) RBM couplings
    z : (n_omega,) log-variances; sigma_i^2 = exp(z_i) is positive by
        construction
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    U: np.ndarray
    W: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c", "U", "W", "z"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.a.ndim != 1 or self.b.ndim != 1 or self.c.ndim != 1 or self.z.ndim != 1:
            raise ValueError("a, b, c, z must be one-dimensional")
        if self.U.ndim != 2 or self.W.ndim != 2:
            raise ValueError("U and W must be two-dimensional")
        n_omega, n_visible, n_hidden = self.a.size, self.b.size, self.c.size
        if self.z.shape != (n_omega,):
            raise ValueError(f"z has shape {self.z.shape}, expected ({n_omega},)")
        if self.U.shape != (n_omega, n_visible):
            raise ValueError(
                f"U has shape {self.U.shape}, expected ({n_omega}, {n_visible})"
            )
        if self.W.shape != (n_visible, n_hidden):
            raise ValueError(
                f"W has shape {self.W.shape}, expected ({n_visible}, {n_hidden})"
            )
        for name in ("a", "b", "c", "U", "W", "z"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter block {name!r} contains non-finite values")

    @property
    def n_omega(self) -> int:
        return self.a.size

    @property
    def n_visible(self) -> int:
        return self.b.size

    @property
    def n_hidden(self) -> int:
        return self.c.size

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.z)

    def blocks(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "b": self.b, "c": self.c, "U": self.U, "W": self.W, "z": self.z}

    def copy(self) -> "SpectralModelParams":
        return SpectralModelParams(
            self.a.copy(), self.b.copy(), self.c.copy(),
            self.U.copy(), self.W.copy(), self.z.copy(),
        )

    def replace(self, **updates: np.ndarray) -> "SpectralModelParams":
        blocks = {name: arr.copy() for name, arr in self.blocks().items()}
        blocks.update(updates)
        return SpectralModelParams(**blocks)

    def to_json_dict(self) -> dict:
        return {
            "n_omega": self.n_omega,
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "U": self.U.tolist(),
            "W": self.W.tolist(),
            "z": self.z.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SpectralModelParams":
        params = cls(
            a=np.asarray(obj["a"]), b=np.asarray(obj["b"]), c=np.asarray(obj["c"]),
            U=np.asarray(obj["U"]).reshape(len(obj["a"]), len(obj["b"])),
            W=np.asarray(obj["W"]).reshape(len(obj["b"]), len(obj["c"])),
            z=np.asarray(obj["z"]),
        )
        for key in ("n_omega", "n_visible", "n_hidden"):
            if key in obj and obj[key] != getattr(params, key):
                raise ValueError(f"shape metadata {key}={obj[key]} does not match arrays")
        return params

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load_json(cls, path) -> "SpectralModelParams":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def init_params(
    n_omega: int,
    n_visible: int = 4,
    n_hidden: int = 4,
    rng: np.random.Generator | None = None,
    scale: float = 0.1,
) -> SpectralModelParams:
    """Small random initialization: a, b, c, U, W ~ N(0, scale^2), z = 0.

    z = 0 gives unit Gaussian variance, so the initial spectral
    distribution is close to a standard normal per coordinate.
    """
    rng = np.random.default_rng() if rng is None else rng
    return SpectralModelParams(
        a=scale * rng.standard_normal(n_omega),
        b=scale * rng.standard_normal(n_visible),
        c=scale * rng.standard_normal(n_hidden),
        U=scale * rng.standard_normal((n_omega, n_visible)),
        W=scale * rng.standard_normal((n_visible, n_hidden)),
        z=np.zeros(n_omega),
    )


# ---------------------------------------------------------------------------
# Spin-state enumeration


def enumerate_spin_states(n: int) -> np.ndarray:
    """All 2^n spin vectors as a (2^n, n) array, row k = state with index k."""
    if n > EXACT_ENUMERATION_LIMIT:
        raise CapacityError(f"cannot enumerate 2^{n} spin states (limit 2^{EXACT_ENUMERATION_LIMIT})")
    idx = np.arange(2**n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (2 * bits - 1).astype(np.float64)


def spins_to_index(spins: np.ndarray) -> np.ndarray:
    """Inverse of :func:`enumerate_spin_states` row indexing; accepts batches."""
    spins = np.asarray(spins)
    bits = ((spins + 1) // 2).astype(np.int64)
    weights = (1 << np.arange(spins.shape[-1], dtype=np.int64))
    return bits @ weights


def joint_index(v: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Flat index of joint states: v_index + 2**n_visible * h_index."""
    n_visible = np.asarray(v).shape[-1]
    return spins_to_index(v) + (spins_to_index(h) << n_visible)


# ---------------------------------------------------------------------------
# Energies and exact distributions


def rbm_energy(v: np.ndarray, h: np.ndarray, params: SpectralModelParams):
    """RBM energy -b.v - c.h - v^T W h; vectorized over leading batch axes."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise ValueError(f"visible vector has length {v.shape[-1]}, expected {params.n_visible}")
    if h.shape[-1] != params.n_hidden:
        raise ValueError(f"hidden vector has length {h.shape[-1]}, expected {params.n_hidden}")
    coupling = np.einsum("...i,ij,...j->...", v, params.W, h)
    return -(v @ params.b) - (h @ params.c) - coupling


def exact_joint_distribution(params: SpectralModelParams) -> np.ndarray:
    """Exact Boltzmann table over all 2^(n_visible + n_hidden) joint states.

    Entry joint_index(v, h) holds P(v, h) = exp(-E(v, h)) / Z.
    """
    n_total = params.n_visible + params.n_hidden
    if n_total > EXACT_ENUMERATION_LIMIT:
        raise CapacityError(
            f"joint enumeration needs 2^{n_total} states (limit 2^{EXACT_ENUMERATION_LIMIT})"
        )
    V = enumerate_spin_states(params.n_visible)
    H = enumerate_spin_states(params.n_hidden)
    # energy[v_idx, h_idx]; transpose-ravel gives the v + 2^n_v * h flat layout
    energy = -(V @ params.b)[:, None] - (H @ params.c)[None, :] - V @ params.W @ H.T
    log_p = -energy
    log_p -= log_p.max()
    p = np.exp(log_p)
    p /= p.sum()
    return p.T.ravel()


def visible_marginal(params: SpectralModelParams) -> np.ndarray:
    """Exact marginal P(v), hidden spins summed out analytically.

    The bipartite structure gives
    P(v) proportional to exp(b.v) * prod_j 2 cosh(c_j + (v^T W)_j).
    """
    if params.n_visible > MARGINAL_ENUMERATION_LIMIT:
        raise CapacityError(
            f"visible marginal needs 2^{params.n_visible} states "
            f"(limit 2^{MARGINAL_ENUMERATION_LIMIT})"
        )
    V = enumerate_spin_states(params.n_visible)
    field = params.c[None, :] + V @ params.W  # (2^n_v, n_hidden)
    # log(2 cosh x) = |x| + log(1 + exp(-2|x|)), stable for large fields;
    # an empty hidden layer contributes an empty sum
    log_p = V @ params.b + np.sum(np.abs(field) + np.log1p(np.exp(-2.0 * np.abs(field))), axis=1)
    log_p -= log_p.max()
    p = np.exp(log_p)
    p /= p.sum()
    return p


# ---------------------------------------------------------------------------
# Sampler backends


class ExactSampler:
    """Draws i.i.d. joint states from the exact Boltzmann table.

    Bias-free and cheap at the default (4, 4) size, so this is the
    default backend.
    """

    name = "exact"

    def sample(self, params: SpectralModelParams, n: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("need at least one sample")
        probs = exact_joint_distribution(params)
        idx = rng.choice(probs.size, size=n, p=probs)
        v_idx = idx & ((1 << params.n_visible) - 1)
        h_idx = idx >> params.n_visible
        V = enumerate_spin_states(params.n_visible)[v_idx]
        H = enumerate_spin_states(params.n_hidden)[h_idx]
        return V, H


class BlockGibbsSampler:
    """Single-chain block Gibbs sampler alternating h | v and v | h.

    Conditional flip probabilities follow from the joint:
    P(h_j = +1 | v) = logistic(2 (c_j + (v^T W)_j)) and symmetrically
    for the visibles. One sweep updates the full hidden layer then the
    full visible layer; a state is kept every `thinning` sweeps after
    `burn_in` sweeps.
    """

    name = "gibbs"

    def __init__(self, burn_in: int = 100, thinning: int = 5):
        if burn_in < 1 or thinning < 1:
            raise ValueError("burn_in and thinning must be >= 1")
        self.burn_in = int(burn_in)
        self.thinning = int(thinning)

    def sample(self, params: SpectralModelParams, n: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("need at least one sample")
        n_v, n_h = params.n_visible, params.n_hidden
        W, b, c = params.W, params.b, params.c
        v = np.where(rng.random(n_v) < 0.5, -1.0, 1.0)
        V_out = np.empty((n, n_v))
        H_out = np.empty((n, n_h))
        total_sweeps = self.burn_in + n * self.thinning
        # uniforms drawn in blocks; the chain itself stays strictly sequential
        chunk = 8192
        kept = 0
        sweep = 0
        h = np.empty(n_h)
        while sweep < total_sweeps:
            block = min(chunk, total_sweeps - sweep)
            u = rng.random((block, n_h + n_v))
            for k in range(block):
                h = np.where(u[k, :n_h] < expit(2.0 * (c + v @ W)), 1.0, -1.0)
                v = np.where(u[k, n_h:] < expit(2.0 * (b + W @ h)), 1.0, -1.0)
                sweep += 1
                if sweep > self.burn_in and (sweep - self.burn_in) % self.thinning == 0:
                    V_out[kept] = v
                    H_out[kept] = h
                    kept += 1
        assert kept == n
        return V_out, H_out


def build_sample_request(params: SpectralModelParams, num_reads: int) -> dict:
    """Wire-format request for the external sampler protocol.

    "h" is the concatenation of visible and hidden biases; "J" lists
    the visible-to-hidden couplings as [i, j, W] with i the visible
    spin index and j = n_visible + hidden index (upper triangular in
    the joint spin ordering, visibles first).
    """
    n_v = params.n_visible
    couplings = [
        [i, n_v + j, float(params.W[i, j])]
        for i in range(n_v)
        for j in range(params.n_hidden)
    ]
    return {
        "h": [float(x) for x in np.concatenate([params.b, params.c])],
        "J": couplings,
        "num_reads": int(num_reads),
    }


def answer_sample_request(request: dict, rng: np.random.Generator) -> dict:
    """Reference responder: exact Boltzmann sampling of the requested Ising problem.

    Used by the bundled sampler stub and by tests; a hardware client
    would replace this with device reads.
    """
    h = np.asarray(request["h"], dtype=np.float64)
    n = h.size
    if n > MARGINAL_ENUMERATION_LIMIT:
        raise CapacityError(f"stub responder enumerates at most 2^{MARGINAL_ENUMERATION_LIMIT} states")
    num_reads = int(request["num_reads"])
    J = np.zeros((n, n))
    for i, j, val in request.get("J", []):
        J[int(i), int(j)] += val
    S = enumerate_spin_states(n)
    # E(s) = -h.s - sum_{i<j} J_ij s_i s_j; sampled at unit temperature
    log_p = S @ h + np.einsum("ki,ij,kj->k", S, J, S)
    log_p -= log_p.max()
    p = np.exp(log_p)
    p /= p.sum()
    idx = rng.choice(p.size, size=num_reads, p=p)
    uniq, counts = np.unique(idx, return_counts=True)
    samples = enumerate_spin_states(n)[uniq].astype(int)
    return {
        "samples": [row.tolist() for row in samples],
        "num_occurrences": [int(cnt) for cnt in counts],
    }


def _parse_sampler_reply(reply_line: str, n_spins: int, num_reads: int) -> np.ndarray:
    """Decode and validate one reply line; raises ValueError when malformed."""
    obj = json.loads(reply_line)
    if not isinstance(obj, dict) or "samples" not in obj or "num_occurrences" not in obj:
        raise ValueError("reply missing 'samples' or 'num_occurrences'")
    samples = np.asarray(obj["samples"], dtype=np.float64)
    counts = np.asarray(obj["num_occurrences"], dtype=np.int64)
    if samples.ndim != 2 or samples.shape[1] != n_spins:
        raise ValueError(f"reply samples have shape {samples.shape}, expected (*, {n_spins})")
    if counts.ndim != 1 or counts.size != samples.shape[0]:
        raise ValueError("num_occurrences does not match samples")
    if not np.all(np.isin(samples, (-1.0, 1.0))):
        raise ValueError("reply contains spin values outside {-1, +1}")
    if np.any(counts < 1) or counts.sum() != num_reads:
        raise ValueError(f"occurrence counts sum to {counts.sum()}, expected {num_reads}")
    return np.repeat(samples, counts, axis=0)


class ExternalSampler:
    """Backend that delegates sampling to an external annealer-like process.

    Speaks newline-delimited JSON, either over the stdin/stdout of a
    subprocess (`command`) or through a request/reply file pair. One
    request line yields one reply line; a malformed reply is resubmitted
    once before raising SamplerProtocolError. The external process owns
    its own entropy, so the rng argument of ``sample`` is unused.
    """

    name = "external"

    def __init__(self, command: list[str] | None = None,
                 request_path=None, reply_path=None,
                 timeout: float = 30.0, poll_interval: float = 0.01):
        if command is None and (request_path is None or reply_path is None):
            raise ValueError("need either a command or a request/reply file pair")
        self.command = command
        self.request_path = Path(request_path) if request_path else None
        self.reply_path = Path(reply_path) if reply_path else None
        self.timeout = timeout
        self.poll_interval = poll_interval
        self._proc = None
        self._replies_seen = 0

    def _submit_stream(self, line: str) -> str:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()
        reply = self._proc.stdout.readline()
        if not reply:
            raise SamplerProtocolError("external sampler closed its output stream")
        return reply

    def _submit_files(self, line: str) -> str:
        with open(self.request_path, "a") as fh:
            fh.write(line + "\n")
        deadline = time.monotonic() + self.timeout
        wanted = self._replies_seen + 1
        while time.monotonic() < deadline:
            if self.reply_path.exists():
                lines = self.reply_path.read_text().splitlines()
                if len(lines) >= wanted:
                    self._replies_seen = wanted
                    return lines[wanted - 1]
            time.sleep(self.poll_interval)
        raise SamplerProtocolError(f"no reply in {self.reply_path} within {self.timeout}s")

    def _roundtrip(self, line: str) -> str:
        if self.command is not None:
            return self._submit_stream(line)
        return self._submit_files(line)

    def sample(self, params: SpectralModelParams, n: int, rng=None):
        if n < 1:
            raise ValueError("need at least one sample")
        request = json.dumps(build_sample_request(params, n), sort_keys=True)
        n_spins = params.n_visible + params.n_hidden
        last_error = None
        for _ in range(2):  # one resubmission on a malformed reply
            reply = self._roundtrip(request)
            try:
                spins = _parse_sampler_reply(reply, n_spins, n)
            except ValueError as exc:
                last_error = exc
                continue
            return spins[:, : params.n_visible], spins[:, params.n_visible:]
        raise SamplerProtocolError(f"external sampler reply malformed after retry: {last_error}")

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None


def make_backend(name: str, *, burn_in: int = 100, thinning: int = 5,
                 external_command: list[str] | None = None,
                 request_path=None, reply_path=None):
    """Backend factory used by the CLI and the estimator."""
    if name == "exact":
        return ExactSampler()
    if name == "gibbs":
        return BlockGibbsSampler(burn_in=burn_in, thinning=thinning)
    if name == "external":
        return ExternalSampler(command=external_command,
                               request_path=request_path, reply_path=reply_path)
    raise ValueError(f"unknown sampler backend {name!r}")


# ---------------------------------------------------------------------------
# Continuous frequencies


def sample_frequencies(params: SpectralModelParams, visibles: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """One frequency vector per visible configuration.

    omega_i ~ N(a_i + (U v)_i, exp(z_i)) independently per coordinate;
    returns an (n_samples, n_omega) array aligned row-for-row with
    `visibles`.
    """
    V = np.atleast_2d(np.asarray(visibles, dtype=np.float64))
    if V.shape[1] != params.n_visible:
        raise ValueError(f"visible states have width {V.shape[1]}, expected {params.n_visible}")
    means = params.a[None, :] + V @ params.U.T
    sigma = np.exp(0.5 * params.z)
    return means + rng.standard_normal(means.shape) * sigma[None, :]
