"""Probability primitives and seeded randomness shared across the package."""

from __future__ import annotations

import math
import zlib

import numpy as np

# Smallest positive normal double; used to cap -log(0).
EPS = float(np.finfo(np.float64).tiny)
NLL_CAP = -math.log(EPS)


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


def _as_finite(logits):
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("logits must be non-empty")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("logits contain non-finite values")
    return x


def stable_softmax(logits):
    """Softmax over the last axis with max-shift.

    Works on a single row or a stack of rows.
    """
    x = _as_finite(logits)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def stable_log_softmax(logits):
    """Log-softmax over the last axis computed as ``x - logsumexp(x)``."""
    x = _as_finite(logits)
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def select_desc_threshold(scores, fraction):
    """Return the value at index ``floor(fraction * N)`` of the descending sort.

    Ties keep their original order (stable sort), and the index is clamped
    to ``N - 1``.

    Args:
        scores: 1-D array of N >= 1 scores.
        fraction: Fraction in ``[0, 1)``.

    Returns:
        The selected score as a float.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidInputError("cannot select a threshold from an empty vector")
    if not 0.0 <= fraction < 1.0:
        raise InvalidInputError(f"fraction must lie in [0, 1), got {fraction}")
    order = np.argsort(-s, kind="stable")
    index = min(int(math.floor(fraction * s.size)), s.size - 1)
    return float(s[order[index]])


class SeededRng:
    """Deterministic random source built on numpy's PCG64.

    Independent sub-streams are derived by name (``"init"``, ``"shuffle"``,
    ``"noise"``, ...) so that adding draws for one purpose never shifts
    another purpose's stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def substream(self, name: str) -> "SeededRng":
        key = zlib.crc32(name.encode("utf-8"))
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        child._seq = np.random.SeedSequence(self.seed, spawn_key=self._seq.spawn_key + (key,))
        child.generator = np.random.Generator(np.random.PCG64(child._seq))
        return child

    # thin pass-throughs used throughout the package
    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, spawn_key={self._seq.spawn_key})"
