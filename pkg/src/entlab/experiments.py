"""Sweep harness: noise-robustness grids and prune-then-retrain curves.

Every cell is trained once per seed and the metrics are averaged over seeds.
Cells are independent, so they can run in worker processes; results are
always merged back in grid order.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import InvalidInputError, SeededRng
from .data import ParallelCorpus, gen_cipher_corpus, prune_corpus, split_corpus
from .model import ModelConfig
from .noise import NoiseSpec, inject
from .objectives import ObjectiveConfig, Strategy
from .training import TrainConfig, sequence_metrics, teacher_forced, train

RESULT_COLUMNS = ("noise_kind", "rate_or_fraction", "strategy", "seed_count", "perplexity",
                  "token_accuracy", "exact_match", "edit_similarity")
PRUNE_METHODS = ("error-norm-mean", "loss-mean", "random")

# Desk-scale recipe shared by the sweeps and the acceptance suite.
DESK_MODEL = dict(embed_dim=16, hidden_dim=64, context_window=2, use_source=True)
DESK_TRAIN = TrainConfig(epochs=20, batch_size=32, learning_rate=0.1, optimizer="adam")
DESK_CORPUS = dict(alphabet_size=26, n_examples=2000, len_range=(4, 12), n_heldout=500)


def desk_model_config(vocab_size: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **DESK_MODEL)


def desk_corpora(seed: int = 0):
    """Clean ``(train, heldout)`` cipher corpora of the desk recipe."""
    c = DESK_CORPUS
    corpus = gen_cipher_corpus(c["alphabet_size"], c["n_examples"] + c["n_heldout"], c["len_range"],
                               SeededRng(seed))
    return split_corpus(corpus, c["n_heldout"])


def noise_seed(seed: int) -> int:
    """Noise seed paired with a training seed; keeps the two streams distinct."""
    return 10_000 + int(seed)


@dataclass
class SweepRow:
    noise_kind: str
    rate_or_fraction: float
    strategy: str
    per_seed: list = field(default_factory=list)

    @property
    def seed_count(self):
        return len(self.per_seed)

    def mean(self, metric):
        return float(np.mean([getattr(m, metric) for m in self.per_seed]))

    def as_record(self):
        return {
            "noise_kind": self.noise_kind,
            "rate_or_fraction": self.rate_or_fraction,
            "strategy": self.strategy,
            "seed_count": self.seed_count,
            **{k: self.mean(k) for k in RESULT_COLUMNS[4:]},
        }


def _robustness_job(args):
    train_corpus, eval_corpus, kind, rate, noise_mode, objective, seed, model_config, train_config = args
    noisy = inject(train_corpus, NoiseSpec(kind, rate, noise_seed(seed), noise_mode))
    cfg = replace(train_config, seed=seed, objective=objective, eval_every=0)
    result = train(noisy, model_config, cfg)
    return sequence_metrics(result.params, model_config, eval_corpus, "eval", len(result.dynamics))


def _run(jobs, fn, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def noise_robustness(train_corpus: ParallelCorpus, eval_corpus: ParallelCorpus, kinds, rates,
                     objectives, seeds, model_config: ModelConfig | None = None,
                     train_config: TrainConfig = DESK_TRAIN, noise_mode: str = "append",
                     workers: int = 1) -> list:
    """Train every (kind, rate, objective, seed) cell and evaluate on clean data.

    Returns one SweepRow per (kind, rate, objective), in grid order.
    """
    kinds, rates, objectives, seeds = list(kinds), list(rates), list(objectives), list(seeds)
    if not (kinds and rates and objectives and seeds):
        raise InvalidInputError("empty sweep grid")
    model_config = model_config or desk_model_config(len(train_corpus.vocab))
    cells, jobs = [], []
    for kind in kinds:
        for rate in rates:
            for obj in objectives:
                cells.append(SweepRow(kind, float(rate), obj.label))
                for seed in seeds:
                    jobs.append((train_corpus, eval_corpus, kind, rate, noise_mode, obj, seed,
                                 model_config, train_config))
    reports = iter(_run(jobs, _robustness_job, workers))
    for row in cells:
        row.per_seed = [next(reports) for _ in seeds]
    return cells


def example_scores(params, model_config, corpus):
    """Per-example mean NLL and mean error norm under teacher forcing."""
    tf = teacher_forced(params, model_config, corpus)
    counts = np.bincount(tf["example"], minlength=len(corpus))
    loss = np.bincount(tf["example"], weights=tf["nll"], minlength=len(corpus)) / counts
    norm = np.bincount(tf["example"], weights=tf["l2"], minlength=len(corpus)) / counts
    return {"loss-mean": loss, "error-norm-mean": norm}


def _prune_job(args):
    noisy, eval_corpus, scores, method, fraction, seed, model_config, train_config = args
    if method == "random":
        rng = SeededRng(seed).substream(f"prune/{fraction!r}")
        pruned = prune_corpus(noisy, np.zeros(len(noisy)), fraction, "random", rng)
    else:
        pruned = prune_corpus(noisy, scores[method], fraction, "highest")
    cfg = replace(train_config, seed=seed, objective=ObjectiveConfig(), eval_every=0)
    result = train(pruned, model_config, cfg)
    return sequence_metrics(result.params, model_config, eval_corpus, "eval", len(result.dynamics))


def prune_retrain(train_corpus: ParallelCorpus, eval_corpus: ParallelCorpus, noise: NoiseSpec | None,
                  fractions, seeds, methods=PRUNE_METHODS, model_config: ModelConfig | None = None,
                  train_config: TrainConfig = DESK_TRAIN, workers: int = 1) -> list:
    """Score a noisy corpus with a reference MLE model, prune, retrain MLE, evaluate.

    The noise (when given) is re-drawn per seed with ``noise_seed(seed)``; the
    reference model for a seed is trained once and shared by all cells.
    """
    fractions, seeds, methods = list(fractions), list(seeds), list(methods)
    if not (fractions and seeds and methods):
        raise InvalidInputError("empty sweep grid")
    for m in methods:
        if m not in PRUNE_METHODS:
            raise InvalidInputError(f"unknown pruning method {m!r}")
    model_config = model_config or desk_model_config(len(train_corpus.vocab))
    kind = noise.kind if noise else "none"
    per_seed_jobs = {}
    for seed in seeds:
        noisy = inject(train_corpus, replace(noise, seed=noise_seed(seed))) if noise else train_corpus
        ref = train(noisy, model_config, replace(train_config, seed=seed,
                                                 objective=ObjectiveConfig(), eval_every=0))
        per_seed_jobs[seed] = (noisy, example_scores(ref.params, model_config, noisy))
    cells, jobs = [], []
    for fraction in fractions:
        for method in methods:
            cells.append(SweepRow(kind, float(fraction), f"prune:{method}"))
            for seed in seeds:
                noisy, scores = per_seed_jobs[seed]
                jobs.append((noisy, eval_corpus, scores, method, fraction, seed, model_config, train_config))
    reports = iter(_run(jobs, _prune_job, workers))
    for row in cells:
        row.per_seed = [next(reports) for _ in seeds]
    return cells


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in rows:
        rec = row.as_record()
        w.writerow([repr(v) if isinstance(v, float) else v for v in (rec[c] for c in RESULT_COLUMNS)])
    return buf.getvalue()


def write_results(rows, path) -> None:
    Path(path).write_text(results_csv(rows), encoding="utf-8")


def objective_for(name: str, **overrides) -> ObjectiveConfig:
    return ObjectiveConfig(strategy=Strategy(name), **overrides)

