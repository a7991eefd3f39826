"""Objective terms for the sparse GP, computed from the factors.

Two flavors share the same machinery: ``mle`` is the negative marginal log
likelihood of the projected-process model, ``var`` the variational free
energy, which adds a trace penalty on the unexplained variance.  Constant
terms (n/2 log 2 pi) are omitted consistently everywhere.

``dense_oracle_energy`` recomputes the same terms by direct dense linear
algebra; it exists for tests and is O(n^3).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCandidateError
from .factor_core import FactoredModel

FLAVORS = ("mle", "var")


def _check_flavor(flavor: str) -> str:
    flavor = flavor.lower()
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}, got {flavor!r}")
    return flavor


@dataclass(frozen=True)
class EnergyTerms:
    """Objective decomposition: data fit, model complexity, trace penalty."""

    e_data: float
    e_complexity: float
    e_trace: float
    flavor: str

    @property
    def objective(self) -> float:
        if self.flavor == "var":
            return 0.5 * (self.e_data + self.e_complexity + self.e_trace)
        return 0.5 * (self.e_data + self.e_complexity)


@dataclass(frozen=True)
class DeltaTerms:
    """Exact decrease of each energy term from appending one candidate."""

    d_data: float
    d_complexity: float
    d_trace: float
    flavor: str

    @property
    def total(self) -> float:
        """Decrease of the objective: F(I) - F(I + {j})."""
        if self.flavor == "var":
            return 0.5 * (self.d_data + self.d_complexity + self.d_trace)
        return 0.5 * (self.d_data + self.d_complexity)


def energy(model: FactoredModel, flavor: str) -> EnergyTerms:
    """Energy terms from cached factors; O(n + k).

    E_D = (||y||^2 - ||c||^2) / sigma^2 with c = Q^T [y; 0],
    E_C = (n - k) log sigma^2 + 2 sum log diag(R),
    E_V = tr(K - L L^T) / sigma^2, read off the residual diagonal.
    """
    flavor = _check_flavor(flavor)
    s2 = model.sigma2
    e_data = (model.y2 - float(model.c @ model.c)) / s2
    e_complexity = (model.n - model.k) * math.log(s2)
    if model.k:
        e_complexity += 2.0 * float(np.log(np.diagonal(model.R)).sum())
    e_trace = float(model.d.sum()) / s2
    return EnergyTerms(e_data, e_complexity, e_trace, flavor)


def dense_oracle_energy(spec, theta, y, idx, flavor: str) -> EnergyTerms:
    """Dense O(n^3) recomputation of the energy terms for testing.

    Forms the rank-|idx| approximation explicitly and evaluates the
    quadratic, log-determinant and trace terms directly.  A singular
    K[idx, idx] is jittered and reported via a warning.
    """
    flavor = _check_flavor(flavor)
    y = np.asarray(y, dtype=float).ravel()
    idx = np.asarray(idx, dtype=int)
    s2 = theta.noise_var
    K = spec.matrix(theta.kernel_log)
    n = K.shape[0]
    if idx.size:
        A = K[np.ix_(idx, idx)]
        C = K[:, idx]
        try:
            Khat = C @ np.linalg.solve(A, C.T)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * K.diagonal().max()
            warnings.warn(f"singular K[I, I]; adding jitter {jitter:.3e}")
            Khat = C @ np.linalg.solve(A + jitter * np.eye(idx.size), C.T)
    else:
        Khat = np.zeros_like(K)
    cov = Khat + s2 * np.eye(n)
    e_data = float(y @ np.linalg.solve(cov, y))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance not positive definite")
    e_trace = float(np.trace(K) - np.trace(Khat)) / s2
    return EnergyTerms(e_data, float(logdet), e_trace, flavor)


def exact_delta(model: FactoredModel, ell, flavor: str) -> DeltaTerms:
    """Exact objective decrease from appending the candidate with column ell.

    Uses the padding identities for the augmented column [ell; 0; sigma]:
    the noise entry lands on a row where Q vanishes, so projections reduce
    to the first n rows.  O(kn).
    """
    flavor = _check_flavor(flavor)
    ell = np.asarray(ell, dtype=float)
    s2 = model.sigma2
    ql = model.Qt.T @ ell
    ell2 = float(ell @ ell)
    u = float(ell @ model.y) - float(model.c @ ql)
    w = ell2 + s2 - float(ql @ ql)
    if w <= 1e-12:
        raise DegenerateCandidateError(
            f"projected candidate norm^2 = {w:.3e} is numerically degenerate")
    d_data = u * u / w / s2
    d_complexity = math.log(s2) - math.log(w)
    d_trace = ell2 / s2
    return DeltaTerms(d_data, d_complexity, d_trace, flavor)
