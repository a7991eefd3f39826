"""Factored low-rank representation with O(kn) append, permute and downdate.

For an inducing index sequence I of length k, the rank-k approximation of the
kernel matrix is K[:, I] K[I, I]^-1 K[I, :] = L L^T, where L holds the first
k columns of a partial Cholesky factorization of K pivoted on I.  Stacking
the noise block gives the augmented factor Lt = [L; sigma * I_k], and a thin
QR factorization Lt = Q R turns the data and complexity terms of the
objective into O(1) expressions over cached quantities (see objective.py).

The factors support three structural updates, all O(kn):

* ``append_pivot``: one further step of Cholesky plus Gram-Schmidt on Q,
* ``permute_to_end``: adjacent-transposition sweeps that move one inducing
  point to the last position while keeping L L^T fixed,
* ``downdate``: drop the last inducing point and its factor column/row.

Q is stored in two blocks: ``Qt`` holds the first n rows, ``Qa`` the k rows
belonging to the noise block of the augmented factor.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateCandidateError, NumericalError

# Residual variances at or below pivot_tol * max(diag K) mark a candidate as
# numerically dependent on the current factors.
PIVOT_TOL_FACTOR = 1e-10

# Coupling of a removed augmented row above this triggers the repair pass in
# downdate(); in exact arithmetic the coupling is zero.
_ROW_REMOVAL_TOL = 1e-8


class FactoredModel:
    """Mutable factor state for one inducing set, one theta, one dataset.

    Single-writer: mutating calls are serialized by the caller.  ``generation``
    increments on every mutation so cached projections elsewhere can detect
    staleness.
    """

    def __init__(self, sigma2, diag_k, y):
        diag_k = np.asarray(diag_k, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if diag_k.shape != y.shape:
            raise ValueError("diag(K) and y must have matching length")
        n = y.size
        self.sigma2 = float(sigma2)
        self.y = y
        self.y2 = float(y @ y)
        self.idx: list[int] = []
        self.L = np.zeros((n, 0))
        self.Qt = np.zeros((n, 0))
        self.Qa = np.zeros((0, 0))
        self.R = np.zeros((0, 0))
        self.c = np.zeros(0)
        self.d = diag_k.copy()
        self.tr_k = float(diag_k.sum())
        self.max_diag = float(diag_k.max()) if n else 0.0
        self.pivot_tol = PIVOT_TOL_FACTOR * self.max_diag
        self.skipped: list[int] = []
        self.generation = 0

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def k(self) -> int:
        return len(self.idx)

    def copy(self) -> "FactoredModel":
        other = FactoredModel.__new__(FactoredModel)
        other.sigma2 = self.sigma2
        other.y = self.y
        other.y2 = self.y2
        other.idx = list(self.idx)
        other.L = self.L.copy()
        other.Qt = self.Qt.copy()
        other.Qa = self.Qa.copy()
        other.R = self.R.copy()
        other.c = self.c.copy()
        other.d = self.d.copy()
        other.tr_k = self.tr_k
        other.max_diag = self.max_diag
        other.pivot_tol = self.pivot_tol
        other.skipped = list(self.skipped)
        other.generation = self.generation
        return other

    # -- structural updates -------------------------------------------------

    def append_pivot(self, j, ell):
        """Extend the factors with pivot j and its residual column ell; O(kn)."""
        j = int(j)
        if j in self.idx:
            raise ValueError(f"pivot {j} already inducing")
        ell = np.asarray(ell, dtype=float)
        sigma = math.sqrt(self.sigma2)

        # Gram-Schmidt against Q with one re-orthogonalization pass.  The
        # augmented part of the new column is sigma on a fresh row where Q is
        # zero, so it never enters the projections.
        r = self.Qt.T @ ell
        qt = ell - self.Qt @ r
        qa = -(self.Qa @ r)
        r2 = self.Qt.T @ qt + self.Qa.T @ qa
        qt -= self.Qt @ r2
        qa -= self.Qa @ r2
        r += r2
        rho = math.sqrt(qt @ qt + qa @ qa + self.sigma2)
        if rho < 1e-12:
            raise DegenerateCandidateError(
                f"pivot {j}: projected augmented column has norm {rho:.3e}")
        qt /= rho
        qa /= rho

        k = self.k
        self.L = np.column_stack([self.L, ell])
        self.Qt = np.column_stack([self.Qt, qt])
        Qa_new = np.zeros((k + 1, k + 1))
        Qa_new[:k, :k] = self.Qa
        Qa_new[:k, k] = qa
        Qa_new[k, k] = sigma / rho
        self.Qa = Qa_new
        R_new = np.zeros((k + 1, k + 1))
        R_new[:k, :k] = self.R
        R_new[:k, k] = r
        R_new[k, k] = rho
        self.R = R_new
        self.c = np.append(self.c, qt @ self.y)
        self.d -= ell * ell
        self.idx.append(j)
        self.generation += 1

    def permute_to_end(self, i):
        """Reorder the inducing sequence so i is last; L L^T is unchanged."""
        if i not in self.idx:
            raise ValueError(f"{i} is not an inducing point")
        p = self.idx.index(i)
        for t in range(p, self.k - 1):
            self._transpose_adjacent(t)
        self.generation += 1

    def _transpose_adjacent(self, t):
        """Swap pivot positions t and t+1, restoring factor structure."""
        i1 = self.idx[t + 1]
        a = self.L[i1, t]
        b = self.L[i1, t + 1]
        r = math.hypot(a, b)
        if r > 0.0:
            ch, sh = a / r, b / r
        else:
            ch, sh = 0.0, 1.0  # both entries vanish: plain column swap

        # Reflection H = [[ch, sh], [sh, -ch]] on columns t, t+1 of the
        # augmented factor zeroes L[i1, t+1] and keeps the new diagonals
        # positive; the matching row reflection on the noise block restores
        # sigma * I there (H is involutory).
        l0 = self.L[:, t].copy()
        l1 = self.L[:, t + 1]
        self.L[:, t] = ch * l0 + sh * l1
        self.L[:, t + 1] = sh * l0 - ch * l1
        a0 = self.Qa[t, :].copy()
        a1 = self.Qa[t + 1, :]
        self.Qa[t, :] = ch * a0 + sh * a1
        self.Qa[t + 1, :] = sh * a0 - ch * a1
        r0 = self.R[:, t].copy()
        r1 = self.R[:, t + 1]
        self.R[:, t] = ch * r0 + sh * r1
        self.R[:, t + 1] = sh * r0 - ch * r1

        # Givens on rows t, t+1 of R clears the bulge below the diagonal;
        # Q and c rotate with the inverse.
        alpha, beta = self.R[t, t], self.R[t + 1, t]
        rho = math.hypot(alpha, beta)
        if rho > 0.0:
            cg, sg = alpha / rho, beta / rho
            row0 = self.R[t, :].copy()
            row1 = self.R[t + 1, :]
            self.R[t, :] = cg * row0 + sg * row1
            self.R[t + 1, :] = -sg * row0 + cg * row1
            self.R[t + 1, t] = 0.0
            for M in (self.Qt, self.Qa):
                col0 = M[:, t].copy()
                col1 = M[:, t + 1]
                M[:, t] = cg * col0 + sg * col1
                M[:, t + 1] = -sg * col0 + cg * col1
            c0, c1 = self.c[t], self.c[t + 1]
            self.c[t] = cg * c0 + sg * c1
            self.c[t + 1] = -sg * c0 + cg * c1

        for u in (t, t + 1):
            if self.R[u, u] < 0.0:
                self.R[u, :] *= -1.0
                self.Qt[:, u] *= -1.0
                self.Qa[:, u] *= -1.0
                self.c[u] *= -1.0

        self.idx[t], self.idx[t + 1] = self.idx[t + 1], self.idx[t]

    def downdate(self):
        """Drop the last inducing point; returns (index, factor column)."""
        k = self.k
        if k == 0:
            raise NumericalError("cannot downdate an empty model")
        j = self.idx.pop()
        ell = self.L[:, -1].copy()
        self.L = self.L[:, :-1]
        coupling = self.Qa[-1, :-1]
        coupling_norm = float(np.linalg.norm(coupling))
        self.Qt = self.Qt[:, :-1]
        self.Qa = self.Qa[:-1, :-1].copy()
        self.R = self.R[:-1, :-1].copy()
        self.c = self.c[:-1]
        self.d += ell * ell
        # Dropping the removed point's augmented row perturbs column
        # orthonormality only through `coupling`, which vanishes in exact
        # arithmetic; repair when float drift has made it visible.
        if coupling_norm > _ROW_REMOVAL_TOL:
            self.refactor_qr()
        self.generation += 1
        return j, ell

    # -- maintenance ---------------------------------------------------------

    def refactor_qr(self):
        """Rebuild Q, R, c from the kept L columns; O(k^2 n) drift repair."""
        L = self.L
        y = self.y
        idx = list(self.idx)
        d_saved = self.d.copy()
        skipped = list(self.skipped)
        gen = self.generation
        self.__init__(self.sigma2, d_saved + np.einsum("nk,nk->n", L, L), y)
        self.skipped = skipped
        for t in range(L.shape[1]):
            self.append_pivot(idx[t], L[:, t])
        self.d = d_saved  # keep the maintained residual diagonal verbatim
        self.generation = gen + 1

    def qr_error(self) -> float:
        """Relative residual of the thin QR against the augmented factor."""
        sigma = math.sqrt(self.sigma2)
        top = self.Qt @ self.R - self.L
        bottom = self.Qa @ self.R - sigma * np.eye(self.k)
        num = math.sqrt(np.sum(top * top) + np.sum(bottom * bottom))
        den = math.sqrt(np.sum(self.L * self.L) + self.sigma2 * self.k)
        return num / den if den > 0 else 0.0

    def orthogonality_error(self) -> float:
        """Max elementwise deviation of Q^T Q from the identity."""
        QtQ = self.Qt.T @ self.Qt + self.Qa.T @ self.Qa
        return float(np.abs(QtQ - np.eye(self.k)).max()) if self.k else 0.0


def residual_column(model: FactoredModel, spec, theta, j, tol=None):
    """Normalized residual column for candidate pivot j.

    Returns ``(ell, ok)``; ``ok`` is False when the residual variance at j is
    at or below the pivot tolerance, in which case j must be skipped.  ``tol``
    overrides the model's candidate admission tolerance.
    """
    j = int(j)
    if j in model.idx:
        raise ValueError(f"{j} is already an inducing point")
    dj = model.d[j]
    if dj <= (model.pivot_tol if tol is None else tol):
        return None, False
    raw = spec.column(theta.kernel_log, j) - model.L @ model.L[j, :]
    return raw / math.sqrt(dj), True


def build(spec, theta, y, pivots) -> FactoredModel:
    """Partial Cholesky plus augmented QR for an ordered pivot sequence.

    Numerically dependent pivots are skipped and recorded on
    ``model.skipped``.  Rebuilding a prescribed sequence uses a machine-level
    floor rather than the stricter candidate admission tolerance, so a set
    that is currently in use survives a rebuild under slightly changed
    hyperparameters.  An empty sequence yields valid empty factors.
    """
    y = np.asarray(y, dtype=float).ravel()
    model = FactoredModel(theta.noise_var, spec.diag(theta.kernel_log), y)
    floor = 0.5 * model.n * np.finfo(float).eps * model.max_diag
    seen = set()
    for j in pivots:
        j = int(j)
        if j in seen:
            model.skipped.append(j)
            continue
        seen.add(j)
        ell, ok = residual_column(model, spec, theta, j, tol=floor)
        if not ok:
            model.skipped.append(j)
            continue
        model.append_pivot(j, ell)
    return model
