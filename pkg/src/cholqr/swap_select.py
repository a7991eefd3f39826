"""Swap updates over the inducing set: the discrete optimization phase.

One swap attempt removes a chosen inducing point, prices every candidate
replacement with the approximate scorer, then evaluates the best proposal
exactly and accepts only on strict objective decrease.  A rejected proposal
re-appends the saved factor column of the removed point, restoring the state
without kernel re-evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCandidateError
from .factor_core import FactoredModel, residual_column
from .info_pivots import InfoPivotSet, approx_delta_all, update_on_swap
from .objective import energy, exact_delta

# Relative QR drift that forces a factor rebuild, checked periodically.
_QR_DRIFT_LIMIT = 1e-6
_QR_CHECK_INTERVAL = 64


def acceptance_tol(f: float) -> float:
    """Strict-improvement guard against float noise."""
    return 1e-9 * (1.0 + abs(f))


@dataclass(frozen=True)
class SwapOutcome:
    """Result of one swap attempt.

    ``objective_decrease`` is the net change F_before - F_after of the whole
    swap (positive only for accepted swaps).
    """

    removed: int
    proposed: int
    accepted: bool
    objective_decrease: float
    objective_after: float
    reason: str = ""


@dataclass
class PhaseStats:
    attempts: int = 0
    accepted: int = 0
    objective_first: float = float("nan")
    objective_final: float = float("nan")
    outcomes: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


def swap_once(model: FactoredModel, ips: InfoPivotSet, victim, spec, theta, y,
              flavor, rng, shortlist=1, f_before=None,
              proposal="approx") -> SwapOutcome:
    """One swap attempt on ``victim``; mutates model and ips in place.

    Steps: move the victim's column last and downdate; evaluate the reduced
    objective; rank candidates (the victim included) by approximate decrease;
    evaluate the top proposal exactly; accept only if the exact post-swap
    objective strictly beats the pre-swap one; finally repair the information
    pivot caches.  ``proposal`` may be "approx" or "uniform" (random
    candidate, used as a control).
    """
    victim = int(victim)
    if f_before is None:
        f_before = energy(model, flavor).objective

    model.permute_to_end(victim)
    removed_index, removed_col = model.downdate()
    f_reduced = energy(model, flavor).objective
    ips.sync_projections(model)

    if proposal == "uniform":
        pool = np.flatnonzero(model.d > model.pivot_tol)
        pool = pool[~np.isin(pool, model.idx)]
        order = rng.choice(pool, size=min(shortlist, pool.size), replace=False) \
            if pool.size else np.empty(0, int)
    elif proposal == "approx":
        scores = approx_delta_all(model, ips, flavor)
        ranked = np.argsort(-scores, kind="stable")  # ties: lowest index first
        order = [j for j in ranked[:shortlist] if np.isfinite(scores[j])]
    else:
        raise ValueError(f"unknown proposal mode {proposal!r}")

    best = None  # (delta_total, candidate, column)
    for j in order:
        j = int(j)
        if j == removed_index:
            ell, ok = removed_col, True
        else:
            ell, ok = residual_column(model, spec, theta, j)
        if not ok:
            continue
        try:
            delta = exact_delta(model, ell, flavor)
        except DegenerateCandidateError:
            continue
        if best is None or delta.total > best[0]:
            best = (delta.total, j, ell)

    if best is None:
        model.append_pivot(removed_index, removed_col)
        ips.sync_projections(model)
        f_after = energy(model, flavor).objective
        return SwapOutcome(removed_index, -1, False, f_before - f_after,
                           f_after, reason="no admissible candidate")

    delta_total, proposed, ell = best
    f_candidate = f_reduced - delta_total
    if proposed != removed_index and f_candidate < f_before - acceptance_tol(f_before):
        model.append_pivot(proposed, ell)
        ips.adopt(update_on_swap(ips, model, spec, theta, y, rng,
                                 removed_index, removed_col, proposed, ell))
        f_after = energy(model, flavor).objective
        return SwapOutcome(removed_index, proposed, True,
                           f_before - f_after, f_after)

    model.append_pivot(removed_index, removed_col)
    ips.sync_projections(model)
    f_after = energy(model, flavor).objective
    return SwapOutcome(removed_index, proposed, False, f_before - f_after,
                       f_after, reason="no improvement")


def discrete_phase(model: FactoredModel, ips: InfoPivotSet, budget, spec, theta,
                   y, flavor, rng, shortlist=1) -> PhaseStats:
    """Run ``budget`` swap attempts in sweeps over the inducing set.

    Victims within a sweep are a random permutation of the current inducing
    points (each considered once per sweep).  The objective never increases
    beyond float tolerance; drift in the factors is checked periodically and
    repaired by a QR rebuild.
    """
    stats = PhaseStats()
    if budget < 0:
        raise ValueError("budget must be non-negative")
    f_cur = energy(model, flavor).objective
    stats.objective_first = f_cur
    stats.objective_final = f_cur
    while stats.attempts < budget and model.k:
        sweep = rng.permutation(np.asarray(model.idx, dtype=int))
        for victim in sweep:
            if stats.attempts >= budget:
                break
            if victim not in model.idx:
                continue
            out = swap_once(model, ips, victim, spec, theta, y, flavor, rng,
                            shortlist=shortlist, f_before=f_cur)
            stats.attempts += 1
            stats.accepted += int(out.accepted)
            stats.outcomes.append(out)
            f_cur = out.objective_after
            if stats.attempts % _QR_CHECK_INTERVAL == 0 \
                    and model.qr_error() > _QR_DRIFT_LIMIT:
                model.refactor_qr()
                ips.sync_projections(model)
                f_cur = energy(model, flavor).objective
    stats.objective_final = f_cur
    return stats


def run_to_fixed_point(model: FactoredModel, ips: InfoPivotSet, spec, theta, y,
                       flavor, rng, shortlist=1, max_sweeps=200) -> int:
    """Sweep until no swap is accepted; returns the number of sweeps used."""
    for sweep in range(1, max_sweeps + 1):
        stats = discrete_phase(model, ips, model.k, spec, theta, y, flavor,
                               rng, shortlist=shortlist)
        if stats.accepted == 0:
            return sweep
    raise RuntimeError(f"no fixed point within {max_sweeps} sweeps")
