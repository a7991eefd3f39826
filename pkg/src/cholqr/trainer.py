"""Hybrid training loop: discrete swap phases alternating with CG phases.

Each epoch runs a bounded number of swap attempts at fixed hyperparameters,
then bounded conjugate-gradient steps at the fixed inducing set, then
rebuilds the factors (the noise variance is baked into the augmented factor)
and refreshes the information pivots.  The returned state is the best
objective seen, not necessarily the last.

Baseline selectors plug in as replacements for the swap phase: ``random``
keeps its initial set, ``greedy`` and ``entropy`` discard and reselect each
epoch (they have no way to refine an existing set after the
hyperparameters move).
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import baselines
from .baselines import SelectorKind
from .errors import ConfigError
from .factor_core import FactoredModel, build
from .hyper_opt import CGConfig, cg_optimize
from .info_pivots import build_info_pivots
from .kernels import Dataset, Hyperparameters, default_hyperparameters
from .objective import energy
from .swap_select import discrete_phase

MODEL_FORMAT = "cholqr-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-settings; ``swaps_per_epoch = None`` means min(60, m)."""

    m: int
    z: int = 16
    flavor: str = "var"
    swaps_per_epoch: int | None = None
    max_epochs: int = 30
    rel_tol: float = 1e-4
    time_budget_seconds: float | None = None
    seed: int = 0
    shortlist: int = 1
    selector: str = "cholqr"
    discrete_first: bool = True
    cg: CGConfig = field(default_factory=CGConfig)
    init_indices: tuple | None = None  # overrides the random initial set

    def resolved_swaps(self) -> int:
        if self.swaps_per_epoch is None:
            return min(60, self.m)
        return self.swaps_per_epoch

    def validate(self, n: int):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.m > n:
            raise ConfigError(f"m = {self.m} exceeds dataset size n = {n}")
        if self.z < 0:
            raise ConfigError("z must be >= 0")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.resolved_swaps() < 0:
            raise ConfigError("swaps_per_epoch must be >= 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    e_data: float
    e_complexity: float
    e_trace: float
    accepted: int
    wall_ms: float


@dataclass
class TrainedModel:
    model: FactoredModel
    theta: Hyperparameters
    flavor: str
    trace: list
    config: TrainConfig
    dataset_hash: str


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.inputs, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(dataset.y, dtype="<f8").tobytes())
    return h.hexdigest()


def _grow_to(model, spec, theta, m, rng, flavor=None, tries_per_slot=32,
             warn=True):
    """Top the inducing set up to m with random admissible points.

    With ``flavor`` set, a point is only added when its exact objective
    decrease is non-negative, so a recorded trace stays monotone; at
    initialization (flavor None) growth is unconditional.
    """
    from .factor_core import residual_column
    from .objective import exact_delta
    while model.k < m:
        pool = np.flatnonzero(model.d > model.pivot_tol)
        pool = pool[~np.isin(pool, model.idx)]
        if pool.size == 0:
            if warn:
                warnings.warn(
                    f"only {model.k} of {m} inducing points are numerically "
                    f"independent; proceeding with the smaller set")
            break
        added = False
        for j in rng.permutation(pool)[:tries_per_slot]:
            ell, ok = residual_column(model, spec, theta, int(j))
            if not ok:
                continue
            if flavor is not None and exact_delta(model, ell, flavor).total < 0:
                continue
            model.append_pivot(int(j), ell)
            added = True
            break
        if not added:
            break


def _record(epoch, model, flavor, accepted, wall_ms):
    terms = energy(model, flavor)
    return EpochRecord(epoch=epoch, objective=terms.objective,
                       e_data=terms.e_data, e_complexity=terms.e_complexity,
                       e_trace=terms.e_trace, accepted=accepted,
                       wall_ms=wall_ms)


def fit(dataset: Dataset, spec, cfg: TrainConfig,
        theta0: Hyperparameters | None = None) -> TrainedModel:
    """Train inducing points and hyperparameters on one dataset."""
    n = dataset.n
    cfg.validate(n)
    selector = SelectorKind.parse(cfg.selector)
    z = selector.z if cfg.selector.startswith("cholqr-") else cfg.z
    rng = np.random.default_rng(cfg.seed)
    y = dataset.y
    theta = theta0 if theta0 is not None else default_hyperparameters(spec, y)

    if cfg.init_indices is not None:
        init = np.asarray(cfg.init_indices, dtype=int)
        if init.size != cfg.m or np.unique(init).size != cfg.m:
            raise ConfigError("init_indices must hold m distinct indices")
    else:
        init = baselines.select_random(n, cfg.m, rng)
    model = build(spec, theta, y, init)
    _grow_to(model, spec, theta, cfg.m, rng)
    ips = build_info_pivots(model, spec, theta, y, z, rng) \
        if selector.name == "cholqr" else None

    trace = [_record(0, model, cfg.flavor, 0, 0.0)]
    best = {"f": trace[0].objective, "idx": list(model.idx),
            "theta": theta, "epoch": 0}
    started = time.perf_counter()
    f_prev = trace[0].objective

    for epoch in range(1, cfg.max_epochs + 1):
        tick = time.perf_counter()
        accepted = 0

        def discrete_step():
            nonlocal model, ips, accepted
            if selector.name == "cholqr":
                stats = discrete_phase(model, ips, cfg.resolved_swaps(), spec,
                                       theta, y, cfg.flavor, rng,
                                       shortlist=cfg.shortlist)
                accepted = stats.accepted
            elif selector.name == "greedy":
                idx = baselines.select_greedy_subset(
                    dataset, spec, theta, cfg.m, selector.candidates,
                    cfg.flavor, rng)
                model = build(spec, theta, y, idx)
            elif selector.name == "entropy":
                idx = baselines.select_entropy_greedy(dataset, spec, theta, cfg.m)
                model = build(spec, theta, y, idx)
            # random: the initial set is kept throughout

        def continuous_step():
            nonlocal theta, model, ips
            theta = cg_optimize(spec, theta, y, model.idx, cfg.flavor, cfg.cg)
            # sigma^2 is embedded in the augmented factor: rebuild from scratch
            model = build(spec, theta, y, model.idx)
            if model.k < cfg.m:
                # pivots degenerate under the new kernel, or an initially
                # rank-deficient kernel has sharpened: top up randomly
                _grow_to(model, spec, theta, cfg.m, rng, flavor=cfg.flavor,
                         warn=False)
            if selector.name == "cholqr":
                ips = build_info_pivots(model, spec, theta, y, z, rng)

        if cfg.discrete_first:
            discrete_step()
            continuous_step()
        else:
            continuous_step()
            discrete_step()

        wall_ms = (time.perf_counter() - tick) * 1e3
        rec = _record(epoch, model, cfg.flavor, accepted, wall_ms)
        trace.append(rec)
        if rec.objective < best["f"]:
            best = {"f": rec.objective, "idx": list(model.idx),
                    "theta": theta, "epoch": epoch}
        improvement = f_prev - rec.objective
        f_prev = rec.objective
        if accepted == 0 and improvement < cfg.rel_tol * (1.0 + abs(f_prev)):
            break
        if cfg.time_budget_seconds is not None \
                and time.perf_counter() - started > cfg.time_budget_seconds:
            break

    # hand back the best state seen, which a failed late phase may not be
    theta = best["theta"]
    model = build(spec, theta, y, best["idx"])
    return TrainedModel(model=model, theta=theta, flavor=cfg.flavor,
                        trace=trace, config=cfg,
                        dataset_hash=dataset_fingerprint(dataset))


def save_model(trained: TrainedModel, path):
    """Versioned JSON container; factors are rebuilt on load."""
    cfg = asdict(trained.config)
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dataset_hash": trained.dataset_hash,
        "flavor": trained.flavor,
        "theta": {
            "log_noise_var": trained.theta.log_noise_var,
            "kernel_log": [float(v) for v in trained.theta.kernel_log],
        },
        "inducing": [int(i) for i in trained.model.idx],
        "config": cfg,
        "trace": [asdict(r) for r in trained.trace],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path, dataset: Dataset, spec) -> TrainedModel:
    """Rebuild a trained model from file; refuses on hash or version mismatch."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: corrupt model file: {exc}")
    if payload.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path}: not a model file")
    if payload.get("version") != MODEL_VERSION:
        raise ConfigError(
            f"{path}: unsupported model version {payload.get('version')}")
    fingerprint = dataset_fingerprint(dataset)
    if payload["dataset_hash"] != fingerprint:
        raise ConfigError(
            f"{path}: dataset hash mismatch "
            f"(model {payload['dataset_hash'][:12]}..., data {fingerprint[:12]}...)")
    theta = Hyperparameters(
        log_noise_var=float(payload["theta"]["log_noise_var"]),
        kernel_log=np.asarray(payload["theta"]["kernel_log"], dtype=float))
    cfg_raw = dict(payload["config"])
    cfg_raw["cg"] = CGConfig(**cfg_raw["cg"])
    if cfg_raw.get("init_indices") is not None:
        cfg_raw["init_indices"] = tuple(cfg_raw["init_indices"])
    cfg = TrainConfig(**cfg_raw)
    model = build(spec, theta, dataset.y, payload["inducing"])
    trace = [EpochRecord(**r) for r in payload["trace"]]
    return TrainedModel(model=model, theta=theta, flavor=payload["flavor"],
                        trace=trace, config=cfg,
                        dataset_hash=payload["dataset_hash"])
