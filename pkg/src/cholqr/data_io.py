"""Dataset files, synthetic generators and train/test splitting.

Dataset CSV schema: one row per point, feature columns first, target last.
Histogram datasets additionally declare channel-group boundaries in the run
configuration (see cli.py).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .kernels import Dataset


def save_dataset_csv(path, dataset: Dataset):
    rows = np.column_stack([dataset.inputs, dataset.y])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")


def load_dataset_csv(path, kind="vector") -> Dataset:
    try:
        rows = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"{path}: cannot read dataset CSV: {exc}")
    if rows.shape[1] < 2:
        raise ConfigError(f"{path}: need at least one feature column plus target")
    return Dataset(inputs=rows[:, :-1], y=rows[:, -1], kind=kind)


def synth_sine_1d(n=200, seed=0, noise=0.25) -> Dataset:
    """Noisy 1-D regression set with several oscillations over [0, 6]."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 6.0, size=n))
    f = np.sin(2.0 * x) + 0.35 * np.cos(5.0 * x) + 0.15 * x
    y = f + noise * rng.standard_normal(n)
    return Dataset(inputs=x[:, None], y=y, kind="vector")


def synth_smooth_8d(n=512, seed=0, noise=0.1) -> Dataset:
    """Smooth nonlinear function of 8-D inputs on the unit cube."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 8))
    w1 = rng.standard_normal(8)
    w2 = rng.standard_normal(8)
    w3 = rng.standard_normal(8)
    f = np.sin(2.0 * X @ w1) + np.cos(X @ w2) + 0.5 * (X @ w3) ** 2
    y = f + noise * rng.standard_normal(n)
    return Dataset(inputs=X, y=y, kind="vector")


def synth_histograms(n=256, seed=0, groups=3, bins=8, noise=0.1):
    """Histogram-valued inputs: ``groups`` blocks of ``bins`` non-negative
    entries, each block normalized to sum one.  Returns (dataset, group
    slices)."""
    rng = np.random.default_rng(seed)
    blocks = []
    slices = []
    start = 0
    for _ in range(groups):
        B = rng.gamma(shape=0.7, scale=1.0, size=(n, bins))
        B /= B.sum(axis=1, keepdims=True)
        blocks.append(B)
        slices.append((start, start + bins))
        start += bins
    H = np.hstack(blocks)
    v = rng.standard_normal(H.shape[1])
    y = np.sin(4.0 * (H @ v)) + noise * rng.standard_normal(n)
    return Dataset(inputs=H, y=y, kind="histogram"), slices


def downsample_every(dataset: Dataset, step: int) -> Dataset:
    """Keep every ``step``-th point (sparser stand-in for the same task)."""
    if step < 1:
        raise ConfigError("downsample step must be >= 1")
    return Dataset(inputs=dataset.inputs[::step], y=dataset.y[::step],
                   kind=dataset.kind)


def train_test_split(n, test_fraction, rng):
    """Random index split; at least one point on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def take(dataset: Dataset, idx) -> Dataset:
    return Dataset(inputs=dataset.inputs[np.asarray(idx, dtype=int)],
                   y=dataset.y[np.asarray(idx, dtype=int)], kind=dataset.kind)
