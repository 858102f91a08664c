"""Per-token data-quality scores.

All scores compare a predicted distribution ``p`` with the one-hot vector of
the target token. The one-hot vector is never built; the target index is
enough.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import EPS, NLL_CAP, InvalidInputError

SQRT2 = float(np.sqrt(2.0))


def _check(p, t):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("probability row must be a non-empty vector")
    t = int(t)
    if not 0 <= t < p.size:
        raise InvalidInputError(f"target index {t} out of range for V={p.size}")
    return p, t


def error_l2_norm(p, t) -> float:
    """L2 norm of ``p - onehot(t)``, in ``[0, sqrt(2)]``."""
    p, t = _check(p, t)
    err = p.copy()
    err[t] -= 1.0
    return float(np.sqrt(np.dot(err, err)))


def error_l1_norm(p, t) -> float:
    """L1 norm of ``p - onehot(t)``; for a distribution this is ``2 (1 - p_t)``."""
    p, t = _check(p, t)
    return 2.0 * (1.0 - float(p[t]))


def tvd_to_point_mass(p, t) -> float:
    """Total variation distance between ``p`` and the point mass at ``t``."""
    p, t = _check(p, t)
    return 1.0 - float(p[t])


def token_nll(p, t) -> float:
    p, t = _check(p, t)
    pt = float(p[t])
    if pt < EPS:
        return NLL_CAP
    return -float(np.log(pt))


def renyi2_entropy(p) -> float:
    """``-log ||p||_2``: zero for a point mass, ``0.5 ln V`` for uniform."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("probability row must be a non-empty vector")
    return -float(np.log(np.sqrt(np.dot(p, p))))


class TokenScore(NamedTuple):
    nll: float
    l1: float
    l2: float
    tvd: float
    renyi2: float


@dataclass(frozen=True)
class QualityScores:
    """Column-wise quality scores for a batch of tokens."""

    nll: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    tvd: np.ndarray
    renyi2: np.ndarray

    def __len__(self):
        return int(self.nll.shape[0])

    def __getitem__(self, i) -> TokenScore:
        return TokenScore(
            float(self.nll[i]), float(self.l1[i]), float(self.l2[i]),
            float(self.tvd[i]), float(self.renyi2[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def error_vectors(probs, targets):
    """Rows of ``p - onehot(t)``; also the softmax cross-entropy logit gradient."""
    err = np.array(probs, dtype=np.float64, copy=True)
    err[np.arange(err.shape[0]), targets] -= 1.0
    return err


def target_probs(probs, targets):
    return probs[np.arange(probs.shape[0]), targets]


def nll_from_probs(pt):
    """Vectorised token NLL with the ``-log(tiny)`` cap."""
    pt = np.asarray(pt, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = -np.log(np.maximum(pt, 0.0))
    return np.where(pt < EPS, NLL_CAP, out)


def score_batch(probs, targets) -> QualityScores:
    """Score every row of ``probs`` against its target index.

    Args:
        probs: ``(N, V)`` array of probability rows.
        targets: ``N`` target indices.

    Returns:
        QualityScores with one entry per row.
    """
    targets = np.asarray(targets, dtype=np.int64).ravel()
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0 and targets.size == 0:
        empty = np.zeros(0)
        return QualityScores(empty, empty, empty, empty, empty)
    if probs.ndim != 2 or probs.shape[0] != targets.size:
        raise InvalidInputError(
            f"row count {probs.shape[0] if probs.ndim == 2 else '?'} does not match "
            f"target count {targets.size}"
        )
    V = probs.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise InvalidInputError("target index out of range")
    pt = target_probs(probs, targets)
    err = error_vectors(probs, targets)
    l2 = np.sqrt(np.einsum("ij,ij->i", err, err))
    tvd = 1.0 - pt
    renyi2 = -np.log(np.sqrt(np.einsum("ij,ij->i", probs, probs)))
    return QualityScores(nll=nll_from_probs(pt), l1=2.0 * tvd, l2=l2, tvd=tvd, renyi2=renyi2)
