"""Competing inducing-point selectors, run under the same trainer and objective.

``random``: uniform subset.  ``greedy``: forward selection that exactly
scores a random candidate subset at each step (subset-size c).  ``entropy``:
a simplified information-gain proxy that repeatedly takes the point with the
largest unexplained variance.  The entropy selector is a stand-in for the
full informative-vector-machine machinery, and is labeled as such in
reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateCandidateError
from .factor_core import build, residual_column
from .objective import exact_delta


@dataclass(frozen=True)
class SelectorKind:
    """Parsed selector choice: name plus selector-specific settings."""

    name: str                  # cholqr | random | greedy | entropy
    candidates: int = 16       # greedy subset size
    z: int = 16                # cholqr information pivot count

    @classmethod
    def parse(cls, text: str) -> "SelectorKind":
        text = text.strip().lower()
        if text == "random":
            return cls("random")
        if text == "entropy":
            return cls("entropy")
        if text.startswith("greedy"):
            _, _, arg = text.partition("-")
            try:
                c = int(arg) if arg else 16
            except ValueError:
                raise ConfigError(f"bad greedy candidate count in {text!r}")
            if c < 1:
                raise ConfigError("greedy candidate count must be >= 1")
            return cls("greedy", candidates=c)
        if text.startswith("cholqr"):
            _, _, arg = text.partition("-")
            if arg:
                if not arg.startswith("z"):
                    raise ConfigError(f"bad cholqr variant {text!r}")
                try:
                    z = int(arg[1:])
                except ValueError:
                    raise ConfigError(f"bad cholqr variant {text!r}")
                if z < 0:
                    raise ConfigError("z must be >= 0")
                return cls("cholqr", z=z)
            return cls("cholqr")
        raise ConfigError(f"unknown selector {text!r}")

    def label(self) -> str:
        if self.name == "cholqr":
            return f"cholqr-z{self.z}"
        if self.name == "greedy":
            return f"greedy-{self.candidates}"
        if self.name == "entropy":
            return "entropy(simplified-ivm-proxy)"
        return self.name


def select_random(n, m, rng) -> np.ndarray:
    """Uniform subset of m distinct indices."""
    if m > n:
        raise ValueError(f"cannot select {m} of {n} points")
    return np.sort(rng.choice(n, size=m, replace=False))


def select_greedy_subset(dataset, spec, theta, m, c, flavor, rng) -> np.ndarray:
    """Forward selection scoring c random candidates exactly at each step.

    Grows the set from empty; each step appends the candidate with the
    largest exact objective decrease among a fresh random subset.  Returns
    fewer than m indices only when every remaining candidate is degenerate.
    """
    if m > dataset.n:
        raise ValueError(f"cannot select {m} of {dataset.n} points")
    model = build(spec, theta, dataset.y, [])
    for _ in range(m):
        pool = np.flatnonzero(model.d > model.pivot_tol)
        pool = pool[~np.isin(pool, model.idx)]
        if pool.size == 0:
            break
        cands = np.sort(rng.choice(pool, size=min(c, pool.size), replace=False))
        best = None  # (delta, j, ell); ties keep the lowest index
        for j in cands:
            ell, ok = residual_column(model, spec, theta, int(j))
            if not ok:
                continue
            try:
                delta = exact_delta(model, ell, flavor)
            except DegenerateCandidateError:
                continue
            if best is None or delta.total > best[0]:
                best = (delta.total, int(j), ell)
        if best is None:
            break
        model.append_pivot(best[1], best[2])
    return np.asarray(model.idx, dtype=int)


def select_entropy_greedy(dataset, spec, theta, m) -> np.ndarray:
    """Pick the largest unexplained point-wise variance, m times."""
    if m > dataset.n:
        raise ValueError(f"cannot select {m} of {dataset.n} points")
    model = build(spec, theta, dataset.y, [])
    for _ in range(m):
        d = model.d.copy()
        d[np.asarray(model.idx, dtype=int)] = -np.inf
        j = int(np.argmax(d))
        if d[j] <= model.pivot_tol:
            break
        ell, ok = residual_column(model, spec, theta, j)
        if not ok:
            break
        model.append_pivot(j, ell)
    return np.asarray(model.idx, dtype=int)
