"""Command-line harness: train, eval, bench, synth, inspect.

Reports are split by determinism: ``report.csv`` (per-epoch objective trace)
and ``summary.json`` are byte-reproducible for a fixed config and seed, while
wall-clock measurements go to ``timings.csv``.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.  ``CHOLQR_THREADS`` caps the
benchmark worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io
from .baselines import SelectorKind
from .errors import ConfigError, NumericalError
from .hyper_opt import CGConfig
from .kernels import (Dataset, HistogramIntersection, PrecomputedCompound,
                      RbfArd, load_kernel_matrix, save_kernel_matrix)
from .objective import energy
from .predictor import Predictor, smse, snlp
from .trainer import TrainConfig, fit, load_model, save_model

_FMT = "%.17g"


def _fmt(x) -> str:
    return _FMT % float(x)


# -- configuration ----------------------------------------------------------


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")


def _require(cfg, key, kind, where):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}: missing")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"{where}.{key}: expected {kind}, got {type(val).__name__}")
    return val


def _resolve(base_dir, path):
    p = Path(path)
    return p if p.is_absolute() else Path(base_dir) / p


def _load_dataset(ds_cfg, base_dir, which):
    where = f"dataset.{which}"
    path = _resolve(base_dir, _require(ds_cfg, which, str, "dataset"))
    if not path.exists():
        raise ConfigError(f"{where}: file not found: {path}")
    kind = ds_cfg.get("kind", "vector")
    return data_io.load_dataset_csv(path, kind=kind)


class KernelFactory:
    """Builds kernel objects for whole datasets or row subsets."""

    def __init__(self, kernel_cfg, ds_cfg, base_dir):
        self.kind = _require(kernel_cfg, "kind", str, "kernel")
        self.groups = None
        self.mats = None
        ds_kind = ds_cfg.get("kind", "vector")
        if self.kind == "rbf-ard":
            if ds_kind != "vector":
                raise ConfigError("kernel.kind: rbf-ard requires dataset.kind = vector")
        elif self.kind == "hist-intersection":
            if ds_kind != "histogram":
                raise ConfigError(
                    "kernel.kind: hist-intersection requires dataset.kind = histogram")
            groups = _require(ds_cfg, "groups", list, "dataset")
            self.groups = [(int(a), int(b)) for a, b in groups]
        elif self.kind == "precomputed-compound":
            if ds_kind != "precomputed":
                raise ConfigError(
                    "kernel.kind: precomputed-compound requires dataset.kind = precomputed")
            paths = _require(ds_cfg, "matrices", list, "dataset")
            self.mats = []
            for q, p in enumerate(paths):
                full = _resolve(base_dir, p)
                if not full.exists():
                    raise ConfigError(f"dataset.matrices[{q}]: file not found: {full}")
                self.mats.append(load_kernel_matrix(full))
        else:
            raise ConfigError(f"kernel.kind: unknown kernel {self.kind!r}")

    def _indices(self, dataset):
        ids = dataset.inputs[:, 0].astype(int)
        n = self.mats[0].shape[0]
        if np.any(ids < 0) or np.any(ids >= n):
            raise ConfigError(
                f"dataset: precomputed indices out of range [0, {n})")
        return ids

    def spec_for(self, dataset: Dataset):
        if self.kind == "rbf-ard":
            return RbfArd(dataset.inputs)
        if self.kind == "hist-intersection":
            return HistogramIntersection(dataset.inputs, self.groups)
        ids = self._indices(dataset)
        sub = [K[np.ix_(ids, ids)] for K in self.mats]
        return PrecomputedCompound(sub)

    def predictor_inputs(self, train: Dataset, test: Dataset, theta, inducing):
        """(k_star, k_star_diag) blocks for prediction on the test set."""
        if self.kind == "precomputed-compound":
            tr = self._indices(train)
            te = self._indices(test)
            cols = tr[np.asarray(inducing, dtype=int)]
            w = np.exp(theta.kernel_log)
            k_star = sum(wq * K[np.ix_(te, cols)] for wq, K in zip(w, self.mats))
            k_diag = sum(wq * np.diagonal(K)[te] for wq, K in zip(w, self.mats))
            return k_star, k_diag
        return None, None  # raw-input kernels evaluate on the fly


def _train_config(cfg, where="train") -> TrainConfig:
    t = dict(cfg)
    m = _require(t, "m", int, where)
    cg = CGConfig(max_fevals=t.pop("cg_max_fevals", None))
    known = {"m", "z", "flavor", "swaps_per_epoch", "max_epochs", "rel_tol",
             "time_budget_seconds", "seed", "shortlist", "selector",
             "discrete_first", "init_indices"}
    unknown = set(t) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    if t.get("flavor", "var") not in ("mle", "var"):
        raise ConfigError(f"{where}.flavor: must be 'mle' or 'var'")
    init = t.get("init_indices")
    return TrainConfig(
        m=m, z=t.get("z", 16), flavor=t.get("flavor", "var"),
        swaps_per_epoch=t.get("swaps_per_epoch"),
        max_epochs=t.get("max_epochs", 30), rel_tol=t.get("rel_tol", 1e-4),
        time_budget_seconds=t.get("time_budget_seconds"),
        seed=t.get("seed", 0), shortlist=t.get("shortlist", 1),
        selector=t.get("selector", "cholqr"),
        discrete_first=t.get("discrete_first", True), cg=cg,
        init_indices=tuple(init) if init is not None else None)


# -- report emission ---------------------------------------------------------


def _check_monotone(trace, selector: str):
    if not selector.startswith("cholqr"):
        return  # restart-style baselines are not monotone by construction
    for prev, cur in zip(trace, trace[1:]):
        if cur.objective > prev.objective + 1e-9 * (1.0 + abs(prev.objective)):
            raise NumericalError(
                f"objective increased at epoch {cur.epoch}: "
                f"{prev.objective!r} -> {cur.objective!r}")


def _write_report(out_dir: Path, trained, extra_summary=None):
    trace = trained.trace
    _check_monotone(trace, trained.config.selector)
    lines = ["epoch,objective,e_data,e_complexity,e_trace,accepted_swaps"]
    for r in trace:
        lines.append(",".join([str(r.epoch), _fmt(r.objective), _fmt(r.e_data),
                               _fmt(r.e_complexity), _fmt(r.e_trace),
                               str(r.accepted)]))
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")

    tlines = ["epoch,wall_ms"]
    for r in trace:
        tlines.append(f"{r.epoch},{r.wall_ms:.3f}")
    (out_dir / "timings.csv").write_text("\n".join(tlines) + "\n")

    selector = SelectorKind.parse(trained.config.selector)
    if selector.name == "cholqr" and "-" not in trained.config.selector:
        selector = SelectorKind("cholqr", z=trained.config.z)
    summary = {
        "selector": selector.label(),
        "flavor": trained.flavor,
        "seed": trained.config.seed,
        "m": trained.config.m,
        "z": trained.config.z,
        "epochs": len(trace) - 1,
        "final_objective": trace[-1].objective,
        "best_objective": energy(trained.model, trained.flavor).objective,
        "inducing": [int(i) for i in trained.model.idx],
        "dataset_hash": trained.dataset_hash,
    }
    if extra_summary:
        summary.update(extra_summary)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _metrics(factory, trained, train_ds, test_ds):
    spec = factory.spec_for(train_ds)
    pred = Predictor(spec, trained.theta, train_ds.y, trained.model.idx)
    k_star, k_diag = factory.predictor_inputs(
        train_ds, test_ds, trained.theta, trained.model.idx)
    if k_star is None:
        out = pred.predict(test_ds.inputs)
    else:
        out = pred.predict_blocks(k_star, k_diag)
    return {
        "smse": smse(out.mean, test_ds.y),
        "snlp": snlp(out.mean, out.obs_var, test_ds.y,
                     float(np.mean(train_ds.y)), float(np.var(train_ds.y))),
    }


# -- subcommands --------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_json(args.config)
    base_dir = Path(args.config).parent
    ds_cfg = _require(cfg, "dataset", dict, "config")
    train_ds = _load_dataset(ds_cfg, base_dir, "train")
    factory = KernelFactory(_require(cfg, "kernel", dict, "config"), ds_cfg, base_dir)

    tcfg = _train_config(_require(cfg, "train", dict, "config"))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif "seed" in cfg:
        overrides["seed"] = int(cfg["seed"])
    if args.selector:
        overrides["selector"] = args.selector
    if args.flavor:
        overrides["flavor"] = args.flavor
    if args.m:
        overrides["m"] = args.m
    if args.z is not None:
        overrides["z"] = args.z
    if overrides:
        from dataclasses import replace
        tcfg = replace(tcfg, **overrides)
    SelectorKind.parse(tcfg.selector)  # validate early

    out_dir = Path(args.out or _resolve(base_dir, cfg.get("out", "runs/train")))
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = factory.spec_for(train_ds)
    trained = fit(train_ds, spec, tcfg)
    save_model(trained, out_dir / "model.json")

    extra = {}
    if "test" in ds_cfg:
        test_ds = _load_dataset(ds_cfg, base_dir, "test")
        extra = _metrics(factory, trained, train_ds, test_ds)
    summary = _write_report(out_dir, trained, extra)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_json(args.config)
    base_dir = Path(args.config).parent
    ds_cfg = _require(cfg, "dataset", dict, "config")
    train_ds = _load_dataset(ds_cfg, base_dir, "train")
    test_ds = _load_dataset(ds_cfg, base_dir, "test")
    factory = KernelFactory(_require(cfg, "kernel", dict, "config"), ds_cfg, base_dir)
    spec = factory.spec_for(train_ds)
    trained = load_model(args.model, train_ds, spec)  # refuses on hash mismatch
    metrics = _metrics(factory, trained, train_ds, test_ds)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _bench_cell(factory, full_ds, selector_text, split_index, seed, bench_cfg,
                out_root):
    split_rng = np.random.default_rng([int(bench_cfg["split_seed"]), split_index])
    tr_idx, te_idx = data_io.train_test_split(
        full_ds.n, bench_cfg["test_fraction"], split_rng)
    train_ds = data_io.take(full_ds, tr_idx)
    test_ds = data_io.take(full_ds, te_idx)

    from dataclasses import replace
    tcfg = replace(bench_cfg["train_config"], seed=int(seed),
                   selector=selector_text)
    spec = factory.spec_for(train_ds)
    t0 = time.perf_counter()
    trained = fit(train_ds, spec, tcfg)
    wall_s = time.perf_counter() - t0

    label = SelectorKind.parse(selector_text).label()
    cell_dir = out_root / "cells" / f"{label}__split{split_index}__seed{seed}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    save_model(trained, cell_dir / "model.json")
    metrics = _metrics(factory, trained, train_ds, test_ds)
    _write_report(cell_dir, trained, metrics)
    return {
        "selector": label, "split": split_index, "seed": int(seed),
        "n_train": train_ds.n, "n_test": test_ds.n,
        "final_objective": energy(trained.model, trained.flavor).objective,
        "smse": metrics["smse"], "snlp": metrics["snlp"],
        "epochs": len(trained.trace) - 1, "wall_s": wall_s,
    }


def cmd_bench(args) -> int:
    cfg = _load_json(args.config)
    base_dir = Path(args.config).parent
    ds_cfg = _require(cfg, "dataset", dict, "config")
    full_ds = _load_dataset(ds_cfg, base_dir, "train")
    factory = KernelFactory(_require(cfg, "kernel", dict, "config"), ds_cfg, base_dir)
    selectors = _require(cfg, "selectors", list, "config")
    for s in selectors:
        SelectorKind.parse(s)
    splits = int(cfg.get("splits", 1))
    seeds = [int(s) for s in cfg.get("seeds", [0])]
    if splits < 1 or not seeds:
        raise ConfigError("splits must be >= 1 and seeds non-empty")
    bench_cfg = {
        "test_fraction": float(cfg.get("test_fraction", 0.25)),
        "split_seed": int(cfg.get("split_seed", 0)),
        "train_config": _train_config(_require(cfg, "train", dict, "config")),
    }
    out_root = Path(args.out or _resolve(base_dir, cfg.get("out", "runs/bench")))
    out_root.mkdir(parents=True, exist_ok=True)

    cells = [(sel, sp, sd) for sel in selectors
             for sp in range(splits) for sd in seeds]
    workers = max(1, int(os.environ.get("CHOLQR_THREADS", "1")))
    results = [None] * len(cells)
    failures = []

    def run(i):
        sel, sp, sd = cells[i]
        try:
            results[i] = _bench_cell(factory, full_ds, sel, sp, sd, bench_cfg,
                                     out_root)
        except Exception as exc:  # record, keep the matrix running
            failures.append({"selector": sel, "split": sp, "seed": sd,
                             "error": f"{type(exc).__name__}: {exc}"})

    if workers == 1:
        for i in range(len(cells)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(cells))))

    done = [r for r in results if r is not None]
    lines = ["selector,split,seed,n_train,n_test,final_objective,smse,snlp,epochs"]
    for r in done:  # aggregation order fixed by cell enumeration
        lines.append(",".join([r["selector"], str(r["split"]), str(r["seed"]),
                               str(r["n_train"]), str(r["n_test"]),
                               _fmt(r["final_objective"]), _fmt(r["smse"]),
                               _fmt(r["snlp"]), str(r["epochs"])]))
    (out_root / "bench.csv").write_text("\n".join(lines) + "\n")

    tlines = ["selector,split,seed,wall_s"]
    for r in done:
        tlines.append(f"{r['selector']},{r['split']},{r['seed']},{r['wall_s']:.3f}")
    (out_root / "bench_timings.csv").write_text("\n".join(tlines) + "\n")

    agg = {}
    for r in done:
        agg.setdefault(r["selector"], []).append(r)
    summary = {
        "cells_total": len(cells), "cells_done": len(done),
        "failures": failures,
        "selectors": {
            sel: {
                "runs": len(rs),
                "mean_smse": float(np.mean([r["smse"] for r in rs])),
                "mean_snlp": float(np.mean([r["snlp"] for r in rs])),
                "mean_final_objective": float(np.mean(
                    [r["final_objective"] for r in rs])),
            } for sel, rs in sorted(agg.items())
        },
    }
    (out_root / "bench_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 3 if failures and not done else 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"kind": args.kind, "n": args.n, "seed": args.seed}
    if args.kind == "sine1d":
        ds = data_io.synth_sine_1d(args.n, args.seed)
    elif args.kind == "smooth8d":
        ds = data_io.synth_smooth_8d(args.n, args.seed)
    elif args.kind == "hist":
        ds, slices = data_io.synth_histograms(args.n, args.seed)
        meta["groups"] = slices
    else:
        raise ConfigError(f"unknown synthetic kind {args.kind!r}")
    if args.downsample_every > 1:
        ds = data_io.downsample_every(ds, args.downsample_every)
        meta["downsample_every"] = args.downsample_every
        meta["n_after_downsample"] = ds.n
    data_io.save_dataset_csv(out_dir / "data.csv", ds)
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {ds.n} points to {out_dir / 'data.csv'}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.model) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.model}: corrupt model file: {exc}")
    view = {
        "flavor": payload.get("flavor"),
        "inducing": payload.get("inducing"),
        "theta": payload.get("theta"),
        "dataset_hash": payload.get("dataset_hash"),
        "epochs": len(payload.get("trace", [])) - 1,
        "final_objective": payload.get("trace", [{}])[-1].get("objective"),
    }
    print(json.dumps(view, indent=2, sort_keys=True))
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cholqr",
        description="Sparse GP regression with swap-based inducing point selection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--selector")
    p.add_argument("--flavor", choices=["mle", "var"])
    p.add_argument("--m", type=int)
    p.add_argument("--z", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on test data")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="selector comparison matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    p.add_argument("--kind", required=True, choices=["sine1d", "smooth8d", "hist"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--downsample-every", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="print a saved model's contents")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
