"""Rank-z residual approximation for fast approximate candidate scoring.

A small set of non-inducing "information pivots" carries a partial Cholesky
factor Lz of the residual K - L L^T.  Rows of Lz then stand in for the exact
residual columns, which prices every candidate swap in O(z^2 n + z k n)
total instead of O(k n) per candidate.

The scorer is read-only; cache consistency with the model is tracked through
the model's generation counter and must be re-established explicitly after
any model mutation (``sync_projections``, ``update_on_swap`` or ``refresh``).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import StaleCacheError
from .factor_core import FactoredModel
from .objective import _check_flavor

# At or below this z, replace-one repair simply rebuilds the factor from
# kernel columns; above it, the rank-two identity below avoids kernel
# re-evaluation.
REBUILD_Z_THRESHOLD = 32

# Approximate residual variances at or below this score as minus infinity.
_APPROX_DEGENERATE_TOL = 1e-12


class InfoPivotSet:
    """Residual factor over z information pivots plus scoring caches.

    ``G = Lz^T Lz``, ``yl = Lz^T y`` and ``QL = Qt^T Lz`` are the three
    reusable products behind the vectorized scores.
    """

    def __init__(self, pivots, Lz, model: FactoredModel):
        self.pivots = np.asarray(pivots, dtype=int)
        self.Lz = Lz
        self.G = Lz.T @ Lz
        self.yl = Lz.T @ model.y
        self.QL = model.Qt.T @ Lz
        self.generation = model.generation

    @property
    def z(self) -> int:
        return self.pivots.size

    def sync_projections(self, model: FactoredModel):
        """Recompute the Q-dependent cache after a model mutation; O(zkn)."""
        self.QL = model.Qt.T @ self.Lz
        self.generation = model.generation

    def adopt(self, other: "InfoPivotSet"):
        """Take over another set's state in place (post-swap repair)."""
        self.pivots = other.pivots
        self.Lz = other.Lz
        self.G = other.G
        self.yl = other.yl
        self.QL = other.QL
        self.generation = other.generation


def _admissible(model: FactoredModel, exclude=()):
    mask = model.d > model.pivot_tol
    mask[np.asarray(model.idx, dtype=int)] = False
    for j in exclude:
        mask[j] = False
    return np.flatnonzero(mask)


def _factor_residual_block(model: FactoredModel, raw_block, pivots):
    """z-step partial Cholesky given raw residual columns (K - LL^T)[:, pivots].

    Degenerate pivots (variance at or below the pivot tolerance once earlier
    information pivots are accounted for) are dropped.  Returns (kept, Lz).
    """
    n = model.n
    dd = model.d.copy()
    kept = []
    cols = []
    for t, p in enumerate(pivots):
        col = raw_block[:, t].copy()
        for ck in cols:
            col -= ck * ck[p]
        if dd[p] <= model.pivot_tol:
            continue
        col /= math.sqrt(dd[p])
        dd -= col * col
        kept.append(int(p))
        cols.append(col)
    Lz = np.column_stack(cols) if cols else np.zeros((n, 0))
    return np.asarray(kept, dtype=int), Lz


def _raw_residual_block(model: FactoredModel, spec, theta, pivots):
    return (spec.block(theta.kernel_log, pivots)
            - model.L @ model.L[np.asarray(pivots, dtype=int), :].T)


def build_info_pivots(model: FactoredModel, spec, theta, y, z, rng) -> InfoPivotSet:
    """Sample z admissible pivots uniformly and factor the residual there.

    Fewer than z admissible points shrinks the set silently; z = 0 yields an
    empty factor whose scores are all minus infinity.  O(z^2 n + z k n).
    """
    if z < 0:
        raise ValueError("z must be non-negative")
    pool = _admissible(model)
    take = min(z, pool.size)
    pivots = rng.choice(pool, size=take, replace=False) if take else np.empty(0, int)
    if take:
        raw = _raw_residual_block(model, spec, theta, pivots)
        kept, Lz = _factor_residual_block(model, raw, pivots)
    else:
        kept, Lz = np.empty(0, int), np.zeros((model.n, 0))
    return InfoPivotSet(kept, Lz, model)


def refresh(ips: InfoPivotSet, model: FactoredModel, spec, theta, y, rng) -> InfoPivotSet:
    """Resample the whole pivot set and rebuild; same contract as build."""
    return build_info_pivots(model, spec, theta, y, ips.z if ips.z else 0, rng)


def approx_delta_all(model: FactoredModel, ips: InfoPivotSet, flavor: str) -> np.ndarray:
    """Approximate objective decrease for every candidate; O(z^2 n + z k n).

    Row j of Lz approximates the normalized residual column of candidate j
    through ell_j ~ Lz a_j / sqrt(||a_j||^2).  Inducing points and candidates
    with negligible approximate residual variance score minus infinity.
    """
    flavor = _check_flavor(flavor)
    if ips.generation != model.generation:
        raise StaleCacheError(
            f"info pivot caches at generation {ips.generation}, "
            f"model at {model.generation}")
    n = model.n
    scores = np.full(n, -np.inf)
    if ips.z == 0:
        return scores
    A = ips.Lz
    dt = np.einsum("nz,nz->n", A, A)
    valid = dt > _APPROX_DEGENERATE_TOL
    valid[np.asarray(model.idx, dtype=int)] = False
    if not valid.any():
        return scores
    Av = A[valid]
    dtv = dt[valid]
    ell2 = np.einsum("nz,nz->n", Av @ ips.G, Av) / dtv
    P = Av @ ips.QL.T                       # rows: sqrt(dt_j) * Q^T ell_j
    q2 = np.einsum("nk,nk->n", P, P) / dtv
    u = (Av @ ips.yl - P @ model.c) / np.sqrt(dtv)
    s2 = model.sigma2
    w = ell2 + s2 - q2
    ok = w > _APPROX_DEGENERATE_TOL
    d_data = np.where(ok, u * u / np.where(ok, w, 1.0) / s2, -np.inf)
    d_comp = np.where(ok, math.log(s2) - np.log(np.where(ok, w, 1.0)), -np.inf)
    if flavor == "var":
        val = 0.5 * (d_data + d_comp + ell2 / s2)
    else:
        val = 0.5 * (d_data + d_comp)
    scores[valid] = np.where(ok, val, -np.inf)
    return scores


def update_on_swap(ips: InfoPivotSet, model: FactoredModel, spec, theta, y, rng,
                   removed_index, removed_col, added_index, added_col,
                   rebuild_threshold=REBUILD_Z_THRESHOLD) -> InfoPivotSet:
    """Repair the residual factor after an accepted swap.

    The model must already be in its post-swap state.  If the accepted
    candidate was an information pivot it is replaced by a fresh random
    admissible point.  For small z the factor is rebuilt from kernel
    columns; for larger z the previous factor's exactness at its own pivots
    gives the new raw residual columns as a rank-two update, avoiding kernel
    re-evaluation.
    """
    pivots = [int(p) for p in ips.pivots if p != added_index]
    replaced = len(pivots) < ips.z
    if replaced:
        pool = _admissible(model, exclude=pivots)
        if pool.size:
            pivots.append(int(rng.choice(pool)))
    pivots = np.asarray(pivots, dtype=int)
    if pivots.size == 0:
        return InfoPivotSet(pivots, np.zeros((model.n, 0)), model)

    if ips.z <= rebuild_threshold:
        raw = _raw_residual_block(model, spec, theta, pivots)
    else:
        removed_col = np.asarray(removed_col, dtype=float)
        added_col = np.asarray(added_col, dtype=float)
        raw = np.empty((model.n, pivots.size))
        old = {int(p): t for t, p in enumerate(ips.pivots)}
        for t, p in enumerate(pivots):
            if p in old:
                # (K - LL^T_new)[:, p] from the old factor's pivot-exactness
                raw[:, t] = (ips.Lz @ ips.Lz[p, :]
                             + removed_col * removed_col[p]
                             - added_col * added_col[p])
            else:
                raw[:, t] = (spec.column(theta.kernel_log, p)
                             - model.L @ model.L[p, :])
    kept, Lz = _factor_residual_block(model, raw, pivots)
    return InfoPivotSet(kept, Lz, model)
