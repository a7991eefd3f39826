"""Predictive distribution of the sparse model, and the two test metrics.

With A = K[I, I], B = K[I, :] and M = sigma^2 A + B B^T, the predictive mean
at a test point is k*^T M^-1 B y and the latent variance is
kappa(x*, x*) - k*^T A^-1 k* + sigma^2 k*^T M^-1 k*.  After a one-time
O(m^2 n) setup each prediction costs O(m) for the mean and O(m^2) for the
variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .hyper_opt import _chol_with_jitter
from .kernels import Hyperparameters


@dataclass(frozen=True)
class Prediction:
    """Batch predictive output; observation variance includes the noise."""

    mean: np.ndarray
    latent_var: np.ndarray
    obs_var: np.ndarray


class Predictor:
    """Cached solves for repeated prediction from one trained state."""

    def __init__(self, spec, theta: Hyperparameters, y, inducing):
        self.spec = spec
        self.theta = theta
        self.inducing = np.asarray(inducing, dtype=int)
        y = np.asarray(y, dtype=float).ravel()
        s2 = theta.noise_var
        C = spec.block(theta.kernel_log, self.inducing)     # (n, m)
        A = C[self.inducing, :]
        A = 0.5 * (A + A.T)
        M = s2 * A + C.T @ C
        M = 0.5 * (M + M.T)
        scale = max(float(np.mean(np.diagonal(A))), 1e-300)
        self._A_ch, _ = _chol_with_jitter(A, scale)
        self._M_ch, _ = _chol_with_jitter(M, max(float(np.mean(np.diagonal(M))), 1e-300))
        self._beta = cho_solve(self._M_ch, C.T @ y)
        self.sigma2 = s2

    @classmethod
    def from_model(cls, spec, theta, model) -> "Predictor":
        return cls(spec, theta, model.y, model.idx)

    def predict_blocks(self, k_star, k_star_diag) -> Prediction:
        """Predict from explicit cross blocks (required for precomputed kernels).

        ``k_star`` is (n*, m) kernel values against the inducing points,
        ``k_star_diag`` the (n*,) test self-covariances.
        """
        k_star = np.atleast_2d(np.asarray(k_star, dtype=float))
        k_star_diag = np.asarray(k_star_diag, dtype=float).ravel()
        mean = k_star @ self._beta
        sa = cho_solve(self._A_ch, k_star.T)
        sm = cho_solve(self._M_ch, k_star.T)
        latent = (k_star_diag
                  - np.einsum("tm,mt->t", k_star, sa)
                  + self.sigma2 * np.einsum("tm,mt->t", k_star, sm))
        return Prediction(mean=mean, latent_var=latent,
                          obs_var=latent + self.sigma2)

    def predict(self, x_star) -> Prediction:
        """Predict at raw test inputs (vector or histogram kernels)."""
        k_star = self.spec.cross(self.theta.kernel_log, x_star, self.inducing)
        k_diag = self.spec.cross_diag(self.theta.kernel_log, x_star)
        return self.predict_blocks(k_star, k_diag)


def smse(y_pred, y_true) -> float:
    """Standardized mean squared error.

    Mean squared error divided by the population (1/N) variance of the test
    outputs; predicting the test mean scores exactly 1.
    """
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if y_true.size < 2:
        raise ValueError("smse needs at least two test points")
    var = float(np.var(y_true))
    if var == 0.0:
        raise ValueError("test outputs have zero variance")
    return float(np.mean((y_pred - y_true) ** 2)) / var


def snlp(mean, obs_var, y_true, train_mean, train_var) -> float:
    """Standardized negative log predictive probability.

    Mean Gaussian negative log density of the test outputs under the model,
    minus the same under the trivial Gaussian fit to the training outputs
    (its variance taken as the raw training output variance).
    """
    mean = np.asarray(mean, dtype=float).ravel()
    obs_var = np.asarray(obs_var, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if np.any(obs_var <= 0):
        raise ValueError("observation variances must be positive")
    if train_var <= 0:
        raise ValueError("training variance must be positive")
    model_nlp = 0.5 * np.log(2.0 * math.pi * obs_var) \
        + (y_true - mean) ** 2 / (2.0 * obs_var)
    base_nlp = 0.5 * math.log(2.0 * math.pi * train_var) \
        + (y_true - train_mean) ** 2 / (2.0 * train_var)
    return float(np.mean(model_nlp) - np.mean(base_nlp))
