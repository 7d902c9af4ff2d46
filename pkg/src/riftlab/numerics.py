"""Dense float64 array helpers, seeded randomness and L2 / box projections.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""

from __future__ import annotations

import hashlib

import numpy as np

Tensor = np.ndarray


class Rng:
    """Seeded counter-based generator (Philox) with a fixed draw sequence.

    Two ``Rng`` objects built from the same seed produce bitwise-identical
    streams. Derived streams for sub-tasks come from :meth:`child`, which
    hashes the parent seed with a tag rather than consuming parent draws.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(key=seed))

    def child(self, *tags) -> "Rng":
        return Rng(derive_seed(self.seed, *tags))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def derive_seed(seed: int, *tags) -> int:
    """Deterministic 64-bit seed from a parent seed and arbitrary tags."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x00")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=np.float64)


def l2_norm(t) -> float:
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("l2_norm of an empty tensor")
    flat = t.ravel()
    return float(np.sqrt(np.dot(flat, flat)))


def project_l2_ball(delta, radius: float) -> Tensor:
    """Project ``delta`` onto the L2 ball of the given radius.

    Inside the ball the input comes back unchanged. Outside, it is rescaled
    so the norm is ``radius`` up to rounding, never above it; this keeps the
    projection bitwise idempotent.
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    delta = as_tensor(delta)
    norm = l2_norm(delta)
    if norm <= radius:
        return delta.copy()
    scale = radius / norm
    out = delta * scale
    while l2_norm(out) > radius:
        scale = np.nextafter(scale, 0.0)
        out = delta * scale
    return out


def clamp(t, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ValueError(f"clamp bounds inverted: lo={lo} > hi={hi}")
    return np.clip(as_tensor(t), lo, hi)


def axpy(a: float, x, y) -> Tensor:
    """Return ``a * x + y`` elementwise."""
    x = as_tensor(x)
    y = as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return a * x + y
