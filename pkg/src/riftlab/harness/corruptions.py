"""Synthetic common-corruption transforms, one per corruption group."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..numerics import Rng
from .data import Dataset

GROUPS = {
    "gaussian_noise": "Noise",
    "box_blur": "Blur",
    "brightness": "Weather",
    "contrast": "Digital",
}
SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in GROUPS:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")

    @property
    def group(self) -> str:
        return GROUPS[self.kind]


def all_corruptions():
    return [CorruptionSpec(kind, s) for kind in GROUPS for s in SEVERITIES]


def _blur(x, width):
    if width == 1:
        return x.copy()
    if x.ndim == 4:
        # spatial axes only; edges replicate
        return uniform_filter(x, size=(1, 1, width, width), mode="nearest")
    return x.copy()


def corrupt(ds: Dataset, spec: CorruptionSpec, seed: int = 0) -> Dataset:
    """Corrupted copy of ``ds``; labels untouched and inputs clamped to [0, 1].

    Blur only acts on image-shaped inputs (N, C, H, W); for flat inputs it is
    the identity.
    """
    x = ds.inputs
    s = spec.severity
    if spec.kind == "gaussian_noise":
        rng = Rng(seed).child("corrupt", spec.kind, s)
        out = x + rng.normal(0.0, 0.04 * s, x.shape)
    elif spec.kind == "box_blur":
        out = _blur(x, 2 * s - 1)
    elif spec.kind == "contrast":
        out = 0.5 + (x - 0.5) * (1 - 0.15 * s)
    else:
        out = x + 0.1 * s
    return ds.with_inputs(np.clip(out, 0.0, 1.0))
