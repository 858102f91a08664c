"""Corpus corruption with exact per-token noise labels.

``copy`` replaces a target with its source, ``shuffle`` permutes the target
tokens, ``substitution`` swaps individual target tokens for random other
letters. Copy and shuffle corrupt ``floor(rate * n)`` clean examples, either
in place (``mode="replace"``) or by appending corrupted duplicates
(``mode="append"``). Substitution is per token and always in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, SeededRng
from .data import ParallelCorpus, ParallelExample

NOISE_KINDS = ("copy", "shuffle", "substitution")
MODES = ("replace", "append")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rate: float
    seed: int = 0
    mode: str = "replace"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidInputError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise InvalidInputError(f"rate must lie in [0, 1], got {self.rate}")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.kind == "substitution" and self.mode != "replace":
            raise InvalidInputError("substitution noise is per token and only supports mode 'replace'")


def _select(corpus, spec, eligible):
    n_pick = int(math.floor(spec.rate * len(corpus)))
    if n_pick > len(eligible):
        raise InvalidInputError(
            f"rate {spec.rate} asks for {n_pick} examples but only {len(eligible)} are eligible"
        )
    rng = SeededRng(spec.seed).substream(f"noise/{spec.kind}")
    if n_pick == 0:
        return rng, []
    picked = rng.choice(np.asarray(eligible), size=n_pick, replace=False)
    return rng, sorted(int(i) for i in picked)


def _assemble(corpus, spec, corrupted: dict):
    examples = list(corpus.examples)
    if spec.mode == "replace":
        for i, ex in corrupted.items():
            examples[i] = ex
    else:
        examples.extend(corrupted[i] for i in sorted(corrupted))
    noise = list(corpus.provenance.get("noise", []))
    noise.append({"kind": spec.kind, "rate": spec.rate, "seed": spec.seed, "mode": spec.mode})
    return corpus.with_examples(examples, noise=noise)


def inject_copy(corpus: ParallelCorpus, spec: NoiseSpec) -> ParallelCorpus:
    if spec.kind != "copy":
        raise InvalidInputError("inject_copy needs a copy NoiseSpec")
    eligible = [i for i, ex in enumerate(corpus) if ex.noise_tag == "clean"]
    _, picked = _select(corpus, spec, eligible)
    corrupted = {}
    for i in picked:
        src = corpus[i].src
        corrupted[i] = ParallelExample(src, src, "copy", range(len(src)))
    return _assemble(corpus, spec, corrupted)


def inject_shuffle(corpus: ParallelCorpus, spec: NoiseSpec) -> ParallelCorpus:
    """Permute the targets of selected examples.

    Only targets with at least two distinct tokens can be reordered into a
    different sequence, so only those are eligible.
    """
    if spec.kind != "shuffle":
        raise InvalidInputError("inject_shuffle needs a shuffle NoiseSpec")
    eligible = [i for i, ex in enumerate(corpus)
                if ex.noise_tag == "clean" and len(set(ex.tgt)) >= 2]
    rng, picked = _select(corpus, spec, eligible)
    corrupted = {}
    for i in picked:
        ex = corpus[i]
        tgt = np.asarray(ex.tgt)
        while True:
            new = tuple(int(x) for x in tgt[rng.permutation(tgt.size)])
            if new != ex.tgt:
                break
        corrupted[i] = ParallelExample(ex.src, new, "shuffle", range(len(new)))
    return _assemble(corpus, spec, corrupted)


def inject_substitution(corpus: ParallelCorpus, spec: NoiseSpec) -> ParallelCorpus:
    """Replace each target token with probability ``rate`` by a different letter."""
    if spec.kind != "substitution":
        raise InvalidInputError("inject_substitution needs a substitution NoiseSpec")
    rng = SeededRng(spec.seed).substream("noise/substitution")
    first, V = corpus.vocab.first_regular, len(corpus.vocab)
    n_letters = V - first
    if n_letters < 2 and spec.rate > 0:
        raise InvalidInputError("substitution needs at least two regular tokens")
    corrupted = {}
    for i, ex in enumerate(corpus):
        if not ex.tgt:
            continue
        hit = rng.random(len(ex.tgt)) < spec.rate
        if not hit.any():
            continue
        # draw from the n_letters - 1 letters other than the original
        draws = rng.integers(0, n_letters - 1, size=int(hit.sum()))
        tgt = list(ex.tgt)
        for pos, d in zip(np.nonzero(hit)[0], draws):
            orig = tgt[pos] - first
            tgt[pos] = first + int(d) + (1 if d >= orig else 0)
        positions = set(ex.noisy_tgt_positions) | {int(p) for p in np.nonzero(hit)[0]}
        tag = ex.noise_tag if ex.noise_tag != "clean" else "substitution"
        corrupted[i] = ParallelExample(ex.src, tgt, tag, positions)
    return _assemble(corpus, spec, corrupted)


def inject(corpus: ParallelCorpus, spec: NoiseSpec) -> ParallelCorpus:
    return {"copy": inject_copy, "shuffle": inject_shuffle,
            "substitution": inject_substitution}[spec.kind](corpus, spec)
