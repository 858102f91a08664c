"""Training loop, optimizers and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DivergenceError, InvalidInputError, SeededRng
from .data import ParallelCorpus, make_batches
from .model import (ModelConfig, ModelParams, backward, corpus_inputs, forward,
                    generate_greedy, init_params, token_inputs)
from .objectives import ObjectiveConfig, apply_objective
from .quality import nll_from_probs, score_batch, target_probs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    init_scale: float = 0.5
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if isinstance(self.objective, dict):
            object.__setattr__(self, "objective", ObjectiveConfig(**self.objective))
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 0:
            raise InvalidInputError("eval_every must be >= 0")


@dataclass(frozen=True)
class DynamicsRecord:
    iteration: int
    mean_top10pct_error_norm: float
    truncated_fraction: float
    train_loss: float


@dataclass(frozen=True)
class MetricsReport:
    split: str
    perplexity: float
    token_accuracy: float
    exact_match: float
    edit_similarity: float
    iteration: int = -1

    def to_dict(self):
        return asdict(self)


DYNAMICS_COLUMNS = ("iteration", "mean_top10pct_error_norm", "truncated_fraction", "train_loss")
METRICS_COLUMNS = ("iteration", "split", "perplexity", "token_accuracy", "exact_match", "edit_similarity")


class SGD:
    kind = "sgd"

    def __init__(self, lr):
        self.lr = lr

    def step(self, params: ModelParams, grads: ModelParams):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    kind = "adam"

    def __init__(self, params: ModelParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: ModelParams, grads: ModelParams):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.learning_rate)
    return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def top_fraction_mean(values, fraction=0.1):
    """Mean of the largest ``ceil(fraction * N)`` values (at least one)."""
    v = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    top = v[: max(1, math.ceil(fraction * v.size))]
    base = top[-1]
    # offset by the minimum so that equal values give back that value exactly
    return float(base + np.mean(top - base))


@dataclass
class TrainResult:
    params: ModelParams
    dynamics: list
    metrics: list
    optimizer: object
    model_config: ModelConfig


def train(corpus: ParallelCorpus, model_config: ModelConfig, train_config: TrainConfig,
          eval_splits: dict | None = None, max_iterations: int | None = None,
          trajectory: list | None = None) -> TrainResult:
    """Train a fresh model on ``corpus``.

    Each iteration runs forward, scores the batch, applies the objective
    (plain MLE before ``objective.start_iteration``), backpropagates and
    takes an optimizer step.

    Args:
        eval_splits: ``name -> corpus`` evaluated every ``eval_every``
            iterations and once after the final iteration.
        max_iterations: Optional cap on the number of updates.
        trajectory: When a list is passed, a copy of the parameters before
            every update is appended to it (for gate checks).
    """
    if len(corpus) == 0:
        raise InvalidInputError("cannot train on an empty corpus")
    if len(corpus.vocab) != model_config.vocab_size:
        raise InvalidInputError("model vocab_size does not match the corpus vocabulary")
    eval_splits = eval_splits or {}
    root = SeededRng(train_config.seed)
    params = init_params(model_config, root.substream("init"), train_config.init_scale)
    shuffle_rng = root.substream("shuffle")
    opt = make_optimizer(params, train_config)
    objective = train_config.objective
    dynamics, metrics = [], []
    it = 0
    done = False
    for epoch in range(train_config.epochs):
        for batch in make_batches(corpus, train_config.batch_size, shuffle_rng):
            if max_iterations is not None and it >= max_iterations:
                done = True
                break
            inputs = token_inputs(batch, model_config)
            probs, cache = forward(params, inputs)
            scores = score_batch(probs, inputs.targets)
            result = apply_objective(probs, inputs.targets, inputs.example, objective, it)
            n = inputs.n_tokens
            record = DynamicsRecord(
                iteration=it,
                mean_top10pct_error_norm=top_fraction_mean(scores.l2, 0.1),
                truncated_fraction=(n - result.mask.kept_count) / n,
                train_loss=result.loss,
            )
            dynamics.append(record)
            if not math.isfinite(result.loss):
                raise DivergenceError(f"non-finite loss at iteration {it}", dynamics)
            if trajectory is not None:
                trajectory.append(params.copy())
            grads = backward(params, cache, result.logit_gradient)
            opt.step(params, grads)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise DivergenceError(f"non-finite parameters after iteration {it}", dynamics)
            it += 1
            if train_config.eval_every and it % train_config.eval_every == 0:
                for name, split in eval_splits.items():
                    metrics.append(sequence_metrics(params, model_config, split, name, it))
        if done:
            break
        log.debug("epoch %d done at iteration %d", epoch, it)
    if not train_config.eval_every or it % train_config.eval_every:
        for name, split in eval_splits.items():
            metrics.append(sequence_metrics(params, model_config, split, name, it))
    return TrainResult(params, dynamics, metrics, opt, model_config)


# --------------------------------------------------------------------------
# evaluation


def teacher_forced(params, config, corpus, batch_size=512):
    """Per-token arrays over the corpus: probs rows are not kept, only summaries.

    Returns a dict with ``example``, ``position``, ``target``, ``noisy``,
    ``nll``, ``l1``, ``l2``, ``renyi2``, ``argmax``.
    """
    parts = {k: [] for k in ("example", "position", "target", "noisy", "nll", "l1", "l2",
                             "renyi2", "argmax")}
    for start, inputs in corpus_inputs(corpus, config, batch_size):
        probs, _ = forward(params, inputs)
        s = score_batch(probs, inputs.targets)
        parts["example"].append(inputs.example + start)
        parts["position"].append(inputs.position)
        parts["target"].append(inputs.targets)
        parts["noisy"].append(inputs.noisy)
        parts["nll"].append(s.nll)
        parts["l1"].append(s.l1)
        parts["l2"].append(s.l2)
        parts["renyi2"].append(s.renyi2)
        parts["argmax"].append(np.argmax(probs, axis=1))
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in parts.items()}


def perplexity(params, config, corpus) -> float:
    """``exp`` of the mean target-token NLL (EOS included, padding excluded)."""
    if len(corpus) == 0:
        raise InvalidInputError("perplexity of an empty split")
    total, count = 0.0, 0
    for _, inputs in corpus_inputs(corpus, config):
        probs, _ = forward(params, inputs)
        nll = nll_from_probs(target_probs(probs, inputs.targets))
        total += float(nll.sum())
        count += nll.size
    return math.exp(total / count)


def levenshtein(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_similarity(decoded, reference) -> float:
    longest = max(len(decoded), len(reference))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(decoded, reference) / longest


def decode_limit(example) -> int:
    return max(len(example.src), len(example.tgt)) + 4


def sequence_metrics(params, config, corpus, split="eval", iteration=-1) -> MetricsReport:
    if len(corpus) == 0:
        raise InvalidInputError("metrics of an empty split")
    tf = teacher_forced(params, config, corpus)
    token_acc = float(np.mean(tf["argmax"] == tf["target"]))
    ppl = math.exp(float(np.mean(tf["nll"])))
    decoded = generate_greedy(params, config, [ex.src for ex in corpus],
                              [decode_limit(ex) for ex in corpus])
    exact = np.mean([d == ex.tgt for d, ex in zip(decoded, corpus)])
    edit = np.mean([edit_similarity(d, ex.tgt) for d, ex in zip(decoded, corpus)])
    return MetricsReport(split, ppl, token_acc, float(exact), float(edit), iteration)


def histogram_overlap(scores_a, scores_b, bins: int = 32) -> float:
    """Shared mass of two normalised histograms on common equal-width bins."""
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("histogram_overlap needs two non-empty samples")
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    edges = histogram_edges(np.concatenate([a, b]), bins)
    ha = np.histogram(a, edges)[0] / a.size
    hb = np.histogram(b, edges)[0] / b.size
    return float(np.minimum(ha, hb).sum())


def histogram_edges(values, bins):
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def auroc(noisy_scores, clean_scores) -> float:
    """P(random noisy score > random clean score), ties counted one half."""
    pos = np.asarray(noisy_scores, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(clean_scores, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise InvalidInputError("auroc needs noisy and clean scores")
    below = np.searchsorted(neg, pos, side="left")
    equal = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * equal.sum()) / (pos.size * neg.size))


@dataclass(frozen=True)
class SeparationReport:
    n_clean: int
    n_noisy: int
    bins: int
    overlap_loss: float
    overlap_l2: float
    auroc_loss: float
    auroc_l2: float
    auroc_l1: float
    mean_l2_clean: float
    mean_l2_noisy: float

    def to_dict(self):
        return asdict(self)


def separation_report(params, config, labeled_corpus, bins: int = 32) -> SeparationReport:
    """How well loss and error norm separate noisy-labelled from clean tokens."""
    tf = teacher_forced(params, config, labeled_corpus)
    noisy = tf["noisy"].astype(bool)
    if not noisy.any():
        raise InvalidInputError("corpus has no noisy-labelled tokens")
    if noisy.all():
        raise InvalidInputError("corpus has no clean-labelled tokens")
    return separation_from_scores(tf["nll"], tf["l2"], tf["l1"], noisy, bins)


def separation_from_scores(nll, l2, l1, noisy, bins=32) -> SeparationReport:
    clean = ~noisy
    return SeparationReport(
        n_clean=int(clean.sum()), n_noisy=int(noisy.sum()), bins=bins,
        overlap_loss=histogram_overlap(nll[clean], nll[noisy], bins),
        overlap_l2=histogram_overlap(l2[clean], l2[noisy], bins),
        auroc_loss=auroc(nll[noisy], nll[clean]),
        auroc_l2=auroc(l2[noisy], l2[clean]),
        auroc_l1=auroc(l1[noisy], l1[clean]),
        mean_l2_clean=float(l2[clean].mean()),
        mean_l2_noisy=float(l2[noisy].mean()),
    )
