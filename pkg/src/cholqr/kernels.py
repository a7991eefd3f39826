"""Kernel functions over indexed training data, with log-space hyperparameters.

Three kernel families are supported:

* ``RbfArd`` for real vector inputs, with one amplitude and one inverse
  squared length-scale per input dimension,
* ``HistogramIntersection`` for histogram inputs, with one weight per
  declared channel group,
* ``PrecomputedCompound`` for opaque index inputs, a weighted sum of
  user-supplied positive semidefinite base matrices.

Every positive parameter is stored and differentiated in log space, so
positivity holds by construction and downstream optimizers run
unconstrained.  All derivative accessors return d kappa / d (log param),
chain rule included.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KMAT_MAGIC = b"KMAT1"


@dataclass(frozen=True)
class Hyperparameters:
    """Log-parameterized continuous parameters: noise variance plus kernel terms.

    ``kernel_log`` is ordered as declared by the kernel's ``param_names``.
    """

    log_noise_var: float
    kernel_log: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kernel_log",
                           np.asarray(self.kernel_log, dtype=float))
        if not np.isfinite(self.log_noise_var):
            raise ConfigError("log_noise_var must be finite")
        if self.kernel_log.ndim != 1 or not np.all(np.isfinite(self.kernel_log)):
            raise ConfigError("kernel_log must be a finite 1-D vector")

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    def to_vector(self) -> np.ndarray:
        """Pack as [log_noise_var, kernel_log...] for optimizers."""
        return np.concatenate([[self.log_noise_var], self.kernel_log])

    @classmethod
    def from_vector(cls, vec) -> "Hyperparameters":
        vec = np.asarray(vec, dtype=float)
        return cls(log_noise_var=float(vec[0]), kernel_log=vec[1:].copy())


@dataclass(frozen=True)
class Dataset:
    """Training inputs plus real-valued outputs.

    ``inputs`` is an (n, d) float array: feature vectors, histograms
    (non-negative entries), or a column of indices for precomputed kernels.
    ``kind`` is one of ``vector``, ``histogram``, ``precomputed``.
    """

    inputs: np.ndarray
    y: np.ndarray
    kind: str = "vector"

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "y", y)
        if inputs.shape[0] != y.shape[0]:
            raise ConfigError(
                f"inputs ({inputs.shape[0]} rows) and outputs ({y.shape[0]}) disagree")
        if self.kind not in ("vector", "histogram", "precomputed"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "histogram" and np.any(inputs < 0):
            raise ConfigError("histogram inputs must have non-negative entries")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


class RbfArd:
    """Squared-exponential kernel with per-dimension inverse length-scales.

    kappa(x, x') = c * exp(-0.5 * sum_t b_t (x_t - x'_t)^2)

    Parameters are [log c, log b_1, ..., log b_d].
    """

    kind = "rbf-ard"

    def __init__(self, X):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.dim = self.X.shape[1]
        self.param_names = ["log_amplitude"] + [
            f"log_inv_lengthsq_{t}" for t in range(self.dim)]

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "RbfArd":
        return cls(dataset.inputs)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _unpack(self, kernel_log):
        kernel_log = np.asarray(kernel_log, dtype=float)
        if kernel_log.shape != (1 + self.dim,):
            raise ConfigError(
                f"expected {1 + self.dim} kernel parameters, got {kernel_log.shape}")
        return float(np.exp(kernel_log[0])), np.exp(kernel_log[1:])

    def eval(self, kernel_log, i, j) -> float:
        c, b = self._unpack(kernel_log)
        delta = self.X[i] - self.X[j]
        return c * float(np.exp(-0.5 * np.dot(b, delta * delta)))

    def _sq_dist(self, b, idx):
        # (n, len(idx)) weighted squared distances against self.X[idx]
        Xi = self.X[idx]
        xb = self.X * b
        s_all = np.einsum("nd,nd->n", xb, self.X)
        s_idx = np.einsum("md,md->m", Xi * b, Xi)
        d2 = s_all[:, None] + s_idx[None, :] - 2.0 * self.X @ (Xi * b).T
        np.maximum(d2, 0.0, out=d2)
        return d2

    def block(self, kernel_log, idx) -> np.ndarray:
        """Columns K[:, idx], shape (n, len(idx))."""
        c, b = self._unpack(kernel_log)
        return c * np.exp(-0.5 * self._sq_dist(b, np.asarray(idx, dtype=int)))

    def column(self, kernel_log, j) -> np.ndarray:
        return self.block(kernel_log, [j])[:, 0]

    def diag(self, kernel_log) -> np.ndarray:
        c, _ = self._unpack(kernel_log)
        return np.full(self.n, c)

    def matrix(self, kernel_log) -> np.ndarray:
        return self.block(kernel_log, np.arange(self.n))

    def grad_block(self, kernel_log, p, idx) -> np.ndarray:
        """d K[:, idx] / d kernel_log[p]."""
        c, b = self._unpack(kernel_log)
        idx = np.asarray(idx, dtype=int)
        K = c * np.exp(-0.5 * self._sq_dist(b, idx))
        if p == 0:
            return K
        t = p - 1
        diff = self.X[:, t, None] - self.X[idx, t][None, :]
        return K * (-0.5 * b[t] * diff * diff)

    def grad_column(self, kernel_log, p, j) -> np.ndarray:
        return self.grad_block(kernel_log, p, [j])[:, 0]

    def grad_diag(self, kernel_log, p) -> np.ndarray:
        c, _ = self._unpack(kernel_log)
        if p == 0:
            return np.full(self.n, c)
        return np.zeros(self.n)

    def cross(self, kernel_log, Xstar, idx) -> np.ndarray:
        """kappa(x*, x_i) for i in idx, shape (n*, len(idx))."""
        c, b = self._unpack(kernel_log)
        Xstar = np.asarray(Xstar, dtype=float)
        if Xstar.ndim == 1:
            Xstar = Xstar[:, None]
        Xi = self.X[np.asarray(idx, dtype=int)]
        s_star = np.einsum("td,td->t", Xstar * b, Xstar)
        s_idx = np.einsum("md,md->m", Xi * b, Xi)
        d2 = s_star[:, None] + s_idx[None, :] - 2.0 * Xstar @ (Xi * b).T
        np.maximum(d2, 0.0, out=d2)
        return c * np.exp(-0.5 * d2)

    def cross_diag(self, kernel_log, Xstar) -> np.ndarray:
        c, _ = self._unpack(kernel_log)
        Xstar = np.asarray(Xstar, dtype=float)
        if Xstar.ndim == 1:
            Xstar = Xstar[:, None]
        return np.full(Xstar.shape[0], c)

    def default_log_params(self, y) -> np.ndarray:
        """Scale-aware defaults: amplitude from var(y), length-scales from ranges."""
        vy = max(float(np.var(y)), 1e-12)
        ranges = np.maximum(self.X.max(axis=0) - self.X.min(axis=0), 1e-6)
        return np.concatenate([[np.log(vy)], -2.0 * np.log(ranges)])


class HistogramIntersection:
    """Histogram intersection kernel with one weight per channel group.

    kappa(h, h') = sum_g w_g * sum_{u in group g} min(h_u, h'_u)

    ``groups`` is a list of (start, end) column slices into the histogram
    matrix.  Parameters are [log w_g for each group].
    """

    kind = "hist-intersection"

    def __init__(self, H, groups):
        self.H = np.asarray(H, dtype=float)
        if np.any(self.H < 0):
            raise ConfigError("histogram entries must be non-negative")
        self.groups = [(int(a), int(b)) for a, b in groups]
        for a, b in self.groups:
            if not (0 <= a < b <= self.H.shape[1]):
                raise ConfigError(f"group slice ({a}, {b}) out of bounds")
        self.param_names = [f"log_weight_{g}" for g in range(len(self.groups))]

    @classmethod
    def from_dataset(cls, dataset: Dataset, groups) -> "HistogramIntersection":
        return cls(dataset.inputs, groups)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def _weights(self, kernel_log):
        kernel_log = np.asarray(kernel_log, dtype=float)
        if kernel_log.shape != (len(self.groups),):
            raise ConfigError(
                f"expected {len(self.groups)} kernel parameters, got {kernel_log.shape}")
        return np.exp(kernel_log)

    def _group_mins(self, Hrows, idx):
        # (n_rows, len(idx), n_groups) summed mins per group
        Hi = self.H[np.asarray(idx, dtype=int)]
        out = np.empty((Hrows.shape[0], Hi.shape[0], len(self.groups)))
        for g, (a, b) in enumerate(self.groups):
            out[:, :, g] = np.minimum(
                Hrows[:, None, a:b], Hi[None, :, a:b]).sum(axis=2)
        return out

    def eval(self, kernel_log, i, j) -> float:
        w = self._weights(kernel_log)
        hi, hj = self.H[i], self.H[j]
        total = 0.0
        for g, (a, b) in enumerate(self.groups):
            total += w[g] * float(np.minimum(hi[a:b], hj[a:b]).sum())
        return total

    def block(self, kernel_log, idx) -> np.ndarray:
        w = self._weights(kernel_log)
        return self._group_mins(self.H, idx) @ w

    def column(self, kernel_log, j) -> np.ndarray:
        return self.block(kernel_log, [j])[:, 0]

    def diag(self, kernel_log) -> np.ndarray:
        w = self._weights(kernel_log)
        out = np.zeros(self.n)
        for g, (a, b) in enumerate(self.groups):
            out += w[g] * self.H[:, a:b].sum(axis=1)
        return out

    def matrix(self, kernel_log) -> np.ndarray:
        return self.block(kernel_log, np.arange(self.n))

    def grad_block(self, kernel_log, p, idx) -> np.ndarray:
        w = self._weights(kernel_log)
        a, b = self.groups[p]
        Hi = self.H[np.asarray(idx, dtype=int)]
        mins = np.minimum(self.H[:, None, a:b], Hi[None, :, a:b]).sum(axis=2)
        return w[p] * mins

    def grad_column(self, kernel_log, p, j) -> np.ndarray:
        return self.grad_block(kernel_log, p, [j])[:, 0]

    def grad_diag(self, kernel_log, p) -> np.ndarray:
        w = self._weights(kernel_log)
        a, b = self.groups[p]
        return w[p] * self.H[:, a:b].sum(axis=1)

    def cross(self, kernel_log, Hstar, idx) -> np.ndarray:
        w = self._weights(kernel_log)
        Hstar = np.atleast_2d(np.asarray(Hstar, dtype=float))
        return self._group_mins(Hstar, idx) @ w

    def cross_diag(self, kernel_log, Hstar) -> np.ndarray:
        w = self._weights(kernel_log)
        Hstar = np.atleast_2d(np.asarray(Hstar, dtype=float))
        out = np.zeros(Hstar.shape[0])
        for g, (a, b) in enumerate(self.groups):
            out += w[g] * Hstar[:, a:b].sum(axis=1)
        return out

    def default_log_params(self, y) -> np.ndarray:
        vy = max(float(np.var(y)), 1e-12)
        return np.full(len(self.groups), np.log(vy / len(self.groups)))


class PrecomputedCompound:
    """Weighted sum of precomputed base kernel matrices.

    kappa(i, j) = sum_q v_q * K_q[i, j], with v_q = exp(log v_q).

    Base matrices must be square, symmetric within 1e-10, and share n.
    Inputs are pure indices into the matrices.
    """

    kind = "precomputed-compound"

    def __init__(self, matrices):
        mats = [np.asarray(K, dtype=float) for K in matrices]
        if not mats:
            raise ConfigError("at least one base matrix required")
        n = mats[0].shape[0]
        for q, K in enumerate(mats):
            if K.ndim != 2 or K.shape[0] != K.shape[1]:
                raise ConfigError(f"base matrix {q} is not square: {K.shape}")
            if K.shape[0] != n:
                raise ConfigError(
                    f"base matrix {q} has n={K.shape[0]}, expected {n}")
            scale = max(np.abs(K).max(), 1.0)
            if np.abs(K - K.T).max() > 1e-10 * scale:
                raise ConfigError(f"base matrix {q} is not symmetric within 1e-10")
        self.mats = mats
        self.param_names = [f"log_weight_{q}" for q in range(len(mats))]

    @property
    def n(self) -> int:
        return self.mats[0].shape[0]

    def _weights(self, kernel_log):
        kernel_log = np.asarray(kernel_log, dtype=float)
        if kernel_log.shape != (len(self.mats),):
            raise ConfigError(
                f"expected {len(self.mats)} kernel parameters, got {kernel_log.shape}")
        return np.exp(kernel_log)

    def eval(self, kernel_log, i, j) -> float:
        w = self._weights(kernel_log)
        return float(sum(wq * K[i, j] for wq, K in zip(w, self.mats)))

    def block(self, kernel_log, idx) -> np.ndarray:
        w = self._weights(kernel_log)
        idx = np.asarray(idx, dtype=int)
        out = np.zeros((self.n, idx.size))
        for wq, K in zip(w, self.mats):
            out += wq * K[:, idx]
        return out

    def column(self, kernel_log, j) -> np.ndarray:
        return self.block(kernel_log, [j])[:, 0]

    def diag(self, kernel_log) -> np.ndarray:
        w = self._weights(kernel_log)
        out = np.zeros(self.n)
        for wq, K in zip(w, self.mats):
            out += wq * np.diagonal(K)
        return out

    def matrix(self, kernel_log) -> np.ndarray:
        w = self._weights(kernel_log)
        out = np.zeros((self.n, self.n))
        for wq, K in zip(w, self.mats):
            out += wq * K
        return out

    def grad_block(self, kernel_log, p, idx) -> np.ndarray:
        w = self._weights(kernel_log)
        return w[p] * self.mats[p][:, np.asarray(idx, dtype=int)]

    def grad_column(self, kernel_log, p, j) -> np.ndarray:
        return self.grad_block(kernel_log, p, [j])[:, 0]

    def grad_diag(self, kernel_log, p) -> np.ndarray:
        w = self._weights(kernel_log)
        return w[p] * np.diagonal(self.mats[p]).copy()

    def cross_from_blocks(self, kernel_log, cross_blocks, diag_blocks):
        """Test-time evaluation from user-supplied base cross/diag blocks.

        ``cross_blocks`` is a list (one per base matrix) of (n*, n) arrays of
        kernel values between test and training points; ``diag_blocks`` the
        matching list of (n*,) test diagonals.
        """
        w = self._weights(kernel_log)
        if len(cross_blocks) != len(self.mats) or len(diag_blocks) != len(self.mats):
            raise ConfigError("one cross and one diag block per base matrix required")
        cross = sum(wq * np.asarray(B, dtype=float)
                    for wq, B in zip(w, cross_blocks))
        diag = sum(wq * np.asarray(d, dtype=float).ravel()
                   for wq, d in zip(w, diag_blocks))
        return cross, diag

    def default_log_params(self, y) -> np.ndarray:
        vy = max(float(np.var(y)), 1e-12)
        return np.full(len(self.mats), np.log(vy / len(self.mats)))


def n_hyperparameters(spec) -> int:
    """Total continuous parameter count: noise variance plus kernel terms."""
    return 1 + len(spec.param_names)


def default_hyperparameters(spec, y) -> Hyperparameters:
    """Scale-aware initialization; noise starts at a tenth of the output variance."""
    vy = max(float(np.var(y)), 1e-12)
    return Hyperparameters(log_noise_var=float(np.log(0.1 * vy)),
                           kernel_log=spec.default_log_params(y))


def save_kernel_matrix(path, K, fmt="binary"):
    """Write a dense kernel matrix: KMAT1 binary or plain CSV."""
    K = np.ascontiguousarray(K, dtype="<f8")
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(KMAT_MAGIC)
            fh.write(struct.pack("<Q", K.shape[0]))
            fh.write(K.tobytes())
    elif fmt == "csv":
        np.savetxt(path, K, delimiter=",")
    else:
        raise ConfigError(f"unknown kernel matrix format {fmt!r}")


def load_kernel_matrix(path) -> np.ndarray:
    """Read a dense kernel matrix, auto-detecting KMAT1 binary versus CSV."""
    with open(path, "rb") as fh:
        head = fh.read(len(KMAT_MAGIC))
        if head == KMAT_MAGIC:
            (n,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(), dtype="<f8")
            if data.size != n * n:
                raise ConfigError(
                    f"{path}: expected {n * n} values, found {data.size}")
            return data.reshape(n, n).astype(float)
    try:
        K = np.loadtxt(path, delimiter=",", dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: neither KMAT1 binary nor numeric CSV: {exc}")
    K = np.atleast_2d(K)
    if K.shape[0] != K.shape[1]:
        raise ConfigError(f"{path}: kernel matrix must be square, got {K.shape}")
    return K
