"""Small dense-math helpers shared by the rest of the package.

Matrices and vectors are plain float64 ``numpy`` arrays. Randomness comes
from :class:`Rng`, a thin wrapper over numpy's PCG64 bit generator keyed by
``(seed, stream)`` through ``SeedSequence`` spawn keys, so independent
streams can be drawn from one seed without coordination.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Deterministic PCG64 generator addressed by ``(seed, stream)``.

    Two instances built with the same seed and stream produce identical
    draw sequences on every platform numpy supports. An instance is
    single-owner: do not draw from it on more than one thread.
    """

    algorithm = "PCG64 (numpy), SeedSequence(seed, spawn_key=(stream,))"

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def affine(W, x, b) -> np.ndarray:
    """Return ``W @ x + b``.

    Raises
    ------
    ValueError
        If the shapes of ``W``, ``x`` and ``b`` do not line up.
    """
    W = as_matrix(W, "W")
    x = as_vector(x, "x")
    b = as_vector(b, "b")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError(
            f"affine shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}"
        )
    return W @ x + b


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def sigmoid(x):
    # branch-free stable form; exp never sees a large positive argument
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    return np.maximum(x, 0.0)


def rng_normal(rng: Rng, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Draw ``n`` normal variates from ``rng``."""
    if std < 0:
        raise ValueError("std must be >= 0")
    return rng.generator.normal(mean, std, size=n)


def rng_uniform(rng: Rng, shape, low: float, high: float) -> np.ndarray:
    return rng.generator.uniform(low, high, size=shape)
