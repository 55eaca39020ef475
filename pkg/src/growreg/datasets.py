"""Seeded synthetic classification data plus a CSV ingester.

Desk-scale stand-ins for image benchmarks: gaussian blobs (linearly
separable by construction), two interleaved moons, and two-arm spirals.
CSV rows are comma-separated floats with a trailing integer label, one
sample per row, so small real datasets can be plugged in as flat vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

KINDS = ("blobs", "moons", "spirals")


@dataclass(eq=False)
class Dataset:
    """Train/val split with a record of how it was made."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    classes: int
    provenance: dict

    def batches(self, batch_size: int, rng: np.random.Generator):
        """Endless stream of uniformly sampled training batches."""
        n = len(self.train_x)
        while True:
            idx = rng.integers(0, n, size=batch_size)
            yield self.train_x[idx], self.train_y[idx]


def _blobs(rng, n, classes, spread):
    # centers on a circle far apart relative to the spread
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = 6.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = rng.integers(0, classes, size=n)
    x = centers[y] + spread * rng.standard_normal((n, 2))
    return x, y


def _moons(rng, n, noise):
    y = rng.integers(0, 2, size=n)
    t = rng.uniform(0, np.pi, size=n)
    x = np.where(
        y[:, None] == 0,
        np.stack([np.cos(t), np.sin(t)], axis=1),
        np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1),
    )
    return x + noise * rng.standard_normal((n, 2)), y


def _spirals(rng, n, noise):
    y = rng.integers(0, 2, size=n)
    t = np.sqrt(rng.uniform(0.05, 1.0, size=n)) * 3 * np.pi
    r = t / (3 * np.pi) * 2.0
    sign = np.where(y == 0, 1.0, -1.0)
    x = np.stack([sign * r * np.cos(t), sign * r * np.sin(t)], axis=1)
    return x + noise * rng.standard_normal((n, 2)), y


def make_dataset(kind, n_train, n_val, seed, noise=0.2, classes=2) -> Dataset:
    if kind not in KINDS:
        raise DomainError(f"unknown dataset kind {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng(seed)
    n = n_train + n_val
    if kind == "blobs":
        x, y = _blobs(rng, n, classes, noise)
    elif kind == "moons":
        if classes != 2:
            raise DomainError("moons is a 2-class dataset")
        x, y = _moons(rng, n, noise)
    else:
        if classes != 2:
            raise DomainError("spirals is a 2-class dataset")
        x, y = _spirals(rng, n, noise)
    return Dataset(
        train_x=x[:n_train],
        train_y=y[:n_train],
        val_x=x[n_train:],
        val_y=y[n_train:],
        classes=classes,
        provenance={
            "kind": kind,
            "n_train": n_train,
            "n_val": n_val,
            "seed": seed,
            "noise": noise,
            "classes": classes,
        },
    )


def load_csv_dataset(path, n_val, seed=0) -> Dataset:
    """Flat-vector samples from CSV; last column is the integer label.

    A seeded shuffle precedes the split so train and val stay disjoint and
    reproducible.
    """
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset CSV {path}: {exc}") from exc
    if raw.shape[1] < 2:
        raise ConfigError(f"{path}: need at least one feature column plus a label")
    x = raw[:, :-1]
    y_raw = raw[:, -1]
    y = y_raw.astype(int)
    if np.any(y != y_raw) or y.min() < 0:
        raise ConfigError(f"{path}: labels must be non-negative integers")
    if n_val >= len(x):
        raise ConfigError(f"{path}: n_val {n_val} leaves no training rows")
    order = np.random.default_rng(seed).permutation(len(x))
    x, y = x[order], y[order]
    classes = int(y.max()) + 1
    return Dataset(
        train_x=x[n_val:],
        train_y=y[n_val:],
        val_x=x[:n_val],
        val_y=y[:n_val],
        classes=classes,
        provenance={"kind": "csv", "path": str(path), "n_val": n_val, "seed": seed},
    )
