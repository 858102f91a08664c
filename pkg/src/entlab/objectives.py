"""Training objectives: MLE and its truncated / reweighted variants.

Every strategy reduces to per-token weights and a truncation mask. The loss
is the weighted NLL averaged over kept tokens, and the logit gradient is the
matching ``weight * (p - onehot) / kept`` per kept token. Masks and weights
are constants of the iteration and are not differentiated through.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .core import EPS, InvalidInputError, select_desc_threshold
from .quality import SQRT2, error_vectors, nll_from_probs, target_probs


class Strategy(str, enum.Enum):
    MLE = "MLE"
    LOSS_TRUNC = "LOSS_TRUNC"
    TAILR = "TAILR"
    ENT_FRACTION = "ENT_FRACTION"
    ENT_THRESHOLD = "ENT_THRESHOLD"


# hyper-parameter grids used by the sweeps
FRACTION_DEFAULT = 0.1
THRESHOLD_GRID = (1.35, 1.38, 1.4)
TAILR_GAMMA_GRID = (0.1, 0.5, 1.0)
TAILR_FLOOR_GRID = (0.1, 0.2, 0.3)


@dataclass(frozen=True)
class ObjectiveConfig:
    strategy: Strategy = Strategy.MLE
    fraction: float = FRACTION_DEFAULT
    threshold: float = 1.38
    gamma: float = 0.1
    weight_floor: float = 0.2
    start_iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0.0 <= self.fraction < 1.0:
            raise InvalidInputError(f"fraction must lie in [0, 1), got {self.fraction}")
        if not 0.0 < self.threshold <= SQRT2 + 1e-12:
            raise InvalidInputError(f"threshold must lie in (0, sqrt(2)], got {self.threshold}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.weight_floor <= 1.0:
            raise InvalidInputError(f"weight_floor must lie in [0, 1], got {self.weight_floor}")
        if self.start_iteration < 0:
            raise InvalidInputError("start_iteration must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @property
    def label(self):
        s = self.strategy
        if s is Strategy.LOSS_TRUNC or s is Strategy.ENT_FRACTION:
            return f"{s.value}(c={self.fraction:g})"
        if s is Strategy.ENT_THRESHOLD:
            return f"{s.value}(tau={self.threshold:g})"
        if s is Strategy.TAILR:
            return f"{s.value}(gamma={self.gamma:g},floor={self.weight_floor:g})"
        return s.value


@dataclass(frozen=True)
class TruncationMask:
    truncated: np.ndarray

    @property
    def kept_count(self) -> int:
        return int(self.truncated.size - np.count_nonzero(self.truncated))

    def __len__(self):
        return int(self.truncated.size)


@dataclass(frozen=True)
class ObjectiveResult:
    loss: float
    logit_gradient: np.ndarray
    mask: TruncationMask
    weights: np.ndarray


def tailr_weight(p_t, gamma, floor):
    """``max(floor, p / (gamma + (1 - gamma) p))``; works elementwise on arrays."""
    p = np.maximum(np.asarray(p_t, dtype=np.float64), EPS)
    w = np.maximum(floor, p / (gamma + (1.0 - gamma) * p))
    return float(w) if w.ndim == 0 else w


def loss_truncation_mask(sentence_nll, c) -> TruncationMask:
    """Drop sentences whose NLL is strictly above the ``c``-quantile from the top."""
    s = np.asarray(sentence_nll, dtype=np.float64).ravel()
    threshold = select_desc_threshold(s, c)
    return TruncationMask(s > threshold)


def ent_fraction_mask(norms, c) -> TruncationMask:
    """Per-batch fraction rule: sort descending, take index ``floor(c N)``, mask ``> threshold``."""
    n = np.asarray(norms, dtype=np.float64).ravel()
    threshold = select_desc_threshold(n, c)
    return TruncationMask(n > threshold)


def ent_threshold_mask(norms, tau) -> TruncationMask:
    """Keep a token iff its error norm is strictly below ``tau``."""
    if not 0.0 < tau <= SQRT2 + 1e-12:
        raise InvalidInputError(f"tau must lie in (0, sqrt(2)], got {tau}")
    n = np.asarray(norms, dtype=np.float64).ravel()
    return TruncationMask(n >= tau)


def sentence_sums(values, sentence_ids, n_sentences):
    return np.bincount(sentence_ids, weights=values, minlength=n_sentences)


def apply_objective(probs, targets, sentence_ids, config: ObjectiveConfig, iteration: int) -> ObjectiveResult:
    """Loss and logit gradient of one batch under ``config``.

    Args:
        probs: ``(N, V)`` predicted rows for the N non-padding tokens.
        targets: ``N`` target ids.
        sentence_ids: ``N`` sentence indices (``0..B-1``) saying which
            sentence each token belongs to; Loss Truncation works on these.
        config: Objective settings.
        iteration: Current training iteration; before
            ``config.start_iteration`` every strategy is plain MLE.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64).ravel()
    sentence_ids = np.asarray(sentence_ids, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != targets.size or sentence_ids.size != targets.size:
        raise InvalidInputError("probs, targets and sentence_ids disagree in length")
    N = targets.size

    pt = target_probs(probs, targets)
    nll = nll_from_probs(pt)
    err = error_vectors(probs, targets)
    weights = np.ones(N)
    truncated = np.zeros(N, dtype=bool)

    strategy = config.strategy if iteration >= config.start_iteration else Strategy.MLE
    if N and strategy is Strategy.LOSS_TRUNC:
        uniq, local = np.unique(sentence_ids, return_inverse=True)
        sent_nll = sentence_sums(nll, local, uniq.size)
        truncated = loss_truncation_mask(sent_nll, config.fraction).truncated[local]
    elif N and strategy is Strategy.TAILR:
        weights = tailr_weight(pt, config.gamma, config.weight_floor)
    elif N and strategy is Strategy.ENT_FRACTION:
        norms = np.sqrt(np.einsum("ij,ij->i", err, err))
        truncated = ent_fraction_mask(norms, config.fraction).truncated
    elif N and strategy is Strategy.ENT_THRESHOLD:
        norms = np.sqrt(np.einsum("ij,ij->i", err, err))
        truncated = ent_threshold_mask(norms, config.threshold).truncated

    weights = np.where(truncated, 0.0, weights)
    mask = TruncationMask(truncated)
    denom = max(1, mask.kept_count)
    loss = float(np.dot(weights, nll)) / denom
    grad = err * (weights / denom)[:, None]
    return ObjectiveResult(loss=loss, logit_gradient=grad, mask=mask, weights=weights)


def loss_with_fixed_mask(probs, targets, weights, kept_count):
    """Objective value for frozen weights and kept count; used by gradient checks."""
    pt = target_probs(np.asarray(probs, dtype=np.float64), np.asarray(targets))
    return float(np.dot(weights, nll_from_probs(pt))) / max(1, kept_count)
