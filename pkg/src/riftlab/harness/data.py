"""Datasets and desk-scale synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng, as_tensor

KINDS = ("blobs2d", "rings2d", "shapes8x8")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        inputs = as_tensor(self.inputs)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.shape[0] != labels.shape[0]:
            raise ValueError(f"inputs/labels length mismatch: {inputs.shape[0]} vs {labels.shape[0]}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def with_inputs(self, inputs) -> "Dataset":
        return Dataset(inputs, self.labels, self.num_classes, self.split)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.split)

    def batches(self, batch_size: int, order=None):
        """Yield ``(inputs, labels)`` batches in ``order`` (default: stored order)."""
        n = len(self)
        if order is None:
            order = np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.labels[idx]

    def frozen(self) -> "Dataset":
        """Read-only copy; writes to its arrays raise."""
        inputs = self.inputs.copy()
        labels = self.labels.copy()
        inputs.flags.writeable = False
        labels.flags.writeable = False
        ds = Dataset.__new__(Dataset)
        for k, v in (("inputs", inputs), ("labels", labels),
                     ("num_classes", self.num_classes), ("split", self.split)):
            object.__setattr__(ds, k, v)
        return ds


def _balanced_labels(n, k, rng):
    return (np.arange(n) % k)[rng.permutation(n)]


def _blobs2d(n, rng):
    # Feature 0 separates the classes with a thin margin and tiny variance;
    # feature 1 separates them with a wide margin but large variance.
    labels = _balanced_labels(n, 2, rng)
    sign = 2.0 * labels - 1.0
    x0 = 0.5 + 0.04 * sign + rng.normal(0.0, 0.01, n)
    x1 = 0.5 + 0.15 * sign + rng.normal(0.0, 0.10, n)
    return np.clip(np.stack([x0, x1], axis=1), 0.0, 1.0), labels


def _rings2d(n, rng):
    labels = _balanced_labels(n, 2, rng)
    radius = np.where(labels == 0, 0.15, 0.35) + rng.normal(0.0, 0.04, n)
    angle = rng.uniform(0.0, 2 * np.pi, n)
    pts = 0.5 + radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return np.clip(pts, 0.0, 1.0), labels


def _shape_mask(label, rng):
    m = np.zeros((8, 8), dtype=bool)
    if label == 0:  # filled square
        s = int(rng.integers(3, 6))
        r, c = rng.integers(0, 9 - s, size=2)
        m[r:r + s, c:c + s] = True
    elif label == 1:  # hollow square
        s = int(rng.integers(4, 7))
        r, c = rng.integers(0, 9 - s, size=2)
        m[r:r + s, c:c + s] = True
        m[r + 1:r + s - 1, c + 1:c + s - 1] = False
    elif label == 2:  # cross
        r, c = rng.integers(2, 6, size=2)
        a = int(rng.integers(2, 4))
        m[max(r - a, 0):r + a + 1, c] = True
        m[r, max(c - a, 0):c + a + 1] = True
    else:  # diagonal stripes
        period = int(rng.integers(3, 5))
        phase = int(rng.integers(0, period))
        i, j = np.indices((8, 8))
        m = (i + j) % period == phase
    return m


def _shapes8x8(n, rng, noise, contrast):
    labels = _balanced_labels(n, 4, rng)
    images = np.empty((n, 1, 8, 8))
    for idx, label in enumerate(labels):
        mask = _shape_mask(int(label), rng)
        bg = rng.uniform(0.1, 0.5)
        fg = bg + rng.uniform(0.5, 1.5) * contrast
        img = np.where(mask, fg, bg) + rng.normal(0.0, noise, (8, 8))
        images[idx, 0] = img
    return np.clip(images, 0.0, 1.0), labels


def gen_synthetic(kind: str, n: int, seed: int, split: str = "train", noise: float = 0.1,
                  contrast: float = 0.25) -> Dataset:
    """Generate a deterministic synthetic dataset with inputs in [0, 1].

    ``noise`` (per-pixel jitter std) and ``contrast`` (mean foreground minus
    background level) only affect ``shapes8x8``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if n <= 0:
        raise ValueError("n must be positive")
    rng = Rng(seed).child("gen_synthetic", kind, split)
    if kind == "blobs2d":
        x, y = _blobs2d(n, rng)
        k = 2
    elif kind == "rings2d":
        x, y = _rings2d(n, rng)
        k = 2
    else:
        x, y = _shapes8x8(n, rng, noise, contrast)
        k = 4
    return Dataset(x, y, k, split)
