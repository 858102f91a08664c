"""Vocabulary, parallel corpora, the cipher task, batching and pruning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import InvalidInputError, SeededRng

PAD, BOS, EOS, SEP = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<sep>")
NOISE_TAGS = ("clean", "copy", "shuffle", "substitution")


class CorpusFormatError(ValueError):
    """Malformed corpus file; ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


@dataclass(frozen=True)
class Vocab:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[: len(RESERVED)] != RESERVED:
            raise InvalidInputError(f"vocabulary must start with {RESERVED}")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidInputError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def for_alphabet(cls, alphabet_size: int) -> "Vocab":
        letters = [chr(ord("a") + i) if i < 26 else f"s{i}" for i in range(alphabet_size)]
        return cls(RESERVED + tuple(letters))

    def __len__(self):
        return len(self.tokens)

    @property
    def first_regular(self) -> int:
        return len(RESERVED)

    def id(self, token: str) -> int:
        return self._index[token]

    def token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, tokens) -> tuple:
        return tuple(self._index[t] for t in tokens)

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class ParallelExample:
    src: tuple
    tgt: tuple
    noise_tag: str = "clean"
    noisy_tgt_positions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "src", tuple(int(i) for i in self.src))
        object.__setattr__(self, "tgt", tuple(int(i) for i in self.tgt))
        pos = tuple(sorted({int(i) for i in self.noisy_tgt_positions}))
        object.__setattr__(self, "noisy_tgt_positions", pos)
        if self.noise_tag not in NOISE_TAGS:
            raise InvalidInputError(f"unknown noise tag {self.noise_tag!r}")
        if pos and (pos[0] < 0 or pos[-1] >= len(self.tgt)):
            raise InvalidInputError("noisy position outside the target")
        if self.noise_tag == "clean" and pos:
            raise InvalidInputError("clean examples cannot carry noisy positions")


@dataclass(frozen=True)
class ParallelCorpus:
    examples: tuple
    vocab: Vocab
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        V = len(self.vocab)
        for ex in self.examples:
            for seq in (ex.src, ex.tgt):
                if seq and (min(seq) < 0 or max(seq) >= V):
                    raise InvalidInputError(f"token id out of range for V={V}")

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def with_examples(self, examples, **provenance) -> "ParallelCorpus":
        prov = dict(self.provenance)
        prov.update(provenance)
        return ParallelCorpus(tuple(examples), self.vocab, prov)

    @property
    def n_tokens(self) -> int:
        """Scored target positions, EOS included."""
        return sum(len(ex.tgt) + 1 for ex in self.examples)


def gen_cipher_corpus(alphabet_size: int, n_examples: int, len_range, rng: SeededRng) -> ParallelCorpus:
    """Random letter strings paired with their position-wise cipher.

    The cipher is a seeded derangement of the alphabet, so a copied source
    differs from the true target at every position.
    """
    lo, hi = (int(v) for v in len_range)
    if alphabet_size < 2:
        raise InvalidInputError("alphabet_size must be >= 2")
    if n_examples < 1:
        raise InvalidInputError("n_examples must be >= 1")
    if not 1 <= lo <= hi:
        raise InvalidInputError("need 1 <= min_len <= max_len")
    vocab = Vocab.for_alphabet(alphabet_size)
    g = rng.substream("data")
    while True:
        perm = g.permutation(alphabet_size)
        if not np.any(perm == np.arange(alphabet_size)):
            break
    offset = vocab.first_regular
    cipher = perm + offset
    examples = []
    for _ in range(n_examples):
        length = int(g.integers(lo, hi + 1))
        letters = g.integers(0, alphabet_size, size=length)
        examples.append(ParallelExample(tuple(letters + offset), tuple(cipher[letters])))
    provenance = {
        "generator": "cipher",
        "seed": rng.seed,
        "alphabet_size": alphabet_size,
        "len_range": [lo, hi],
        "cipher": [int(c) for c in cipher],
    }
    return ParallelCorpus(tuple(examples), vocab, provenance)


def cipher_map(corpus: ParallelCorpus) -> dict:
    """Source id -> target id mapping recorded by the generator."""
    cipher = corpus.provenance["cipher"]
    off = corpus.vocab.first_regular
    return {off + i: int(c) for i, c in enumerate(cipher)}


def split_corpus(corpus: ParallelCorpus, n_heldout: int):
    """Split off the last ``n_heldout`` examples as a held-out set."""
    if not 0 <= n_heldout < len(corpus):
        raise InvalidInputError("n_heldout must be smaller than the corpus")
    cut = len(corpus) - n_heldout
    return corpus.with_examples(corpus.examples[:cut]), corpus.with_examples(corpus.examples[cut:])


# --------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class Batch:
    """Padded arrays for a group of examples.

    ``tgt`` holds the scored targets (EOS appended) and ``tgt_mask`` flags the
    real positions; padding never reaches a loss or a quantile.
    """

    indices: np.ndarray
    src: np.ndarray
    src_len: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray
    noisy: np.ndarray

    def __len__(self):
        return int(self.indices.size)

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def make_batch(examples: Sequence[ParallelExample], indices=None) -> Batch:
    B = len(examples)
    if indices is None:
        indices = np.arange(B)
    Ls = max([len(ex.src) for ex in examples] + [1])
    Lt = max(len(ex.tgt) for ex in examples) + 1
    src = np.full((B, Ls), PAD, dtype=np.int64)
    tgt = np.full((B, Lt), PAD, dtype=np.int64)
    mask = np.zeros((B, Lt), dtype=bool)
    noisy = np.zeros((B, Lt), dtype=bool)
    src_len = np.zeros(B, dtype=np.int64)
    for b, ex in enumerate(examples):
        src[b, : len(ex.src)] = ex.src
        src_len[b] = len(ex.src)
        n = len(ex.tgt)
        tgt[b, :n] = ex.tgt
        tgt[b, n] = EOS
        mask[b, : n + 1] = True
        if ex.noisy_tgt_positions:
            noisy[b, list(ex.noisy_tgt_positions)] = True
    return Batch(np.asarray(indices, dtype=np.int64), src, src_len, tgt, mask, noisy)


def make_batches(corpus: ParallelCorpus, batch_size: int, rng: SeededRng | None = None) -> list:
    """One epoch of batches; shuffled by ``rng`` when given, else in corpus order."""
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    n = len(corpus)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        batches.append(make_batch([corpus.examples[i] for i in idx], idx))
    return batches


# --------------------------------------------------------------------------
# pruning


def sentence_mean_scores(corpus: ParallelCorpus, token_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of per-token scores for each example (EOS included)."""
    if len(token_scores) != len(corpus):
        raise InvalidInputError("one score vector per example required")
    return np.array([float(np.mean(s)) for s in token_scores])


def prune_corpus(corpus: ParallelCorpus, per_example_scores, fraction: float,
                 mode: str = "highest", rng: SeededRng | None = None) -> ParallelCorpus:
    """Remove ``floor(fraction * n)`` examples and keep the rest in order.

    ``mode="highest"`` removes the top scores (earlier index first on ties);
    ``mode="random"`` removes a seeded uniform sample.
    """
    scores = np.asarray(per_example_scores, dtype=np.float64).ravel()
    n = len(corpus)
    if scores.size != n:
        raise InvalidInputError(f"got {scores.size} scores for {n} examples")
    if not 0.0 <= fraction < 1.0:
        raise InvalidInputError("fraction must lie in [0, 1)")
    k = int(math.floor(fraction * n))
    if mode == "highest":
        removed = np.argsort(-scores, kind="stable")[:k]
    elif mode == "random":
        if rng is None:
            raise InvalidInputError("random pruning needs an rng")
        removed = rng.choice(n, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    else:
        raise InvalidInputError(f"unknown pruning mode {mode!r}")
    keep = np.ones(n, dtype=bool)
    keep[removed] = False
    return corpus.with_examples(
        [ex for ex, k_ in zip(corpus.examples, keep) if k_],
        pruned={"mode": mode, "fraction": fraction, "removed": int(k)},
    )


# --------------------------------------------------------------------------
# JSONL io


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_corpus(corpus: ParallelCorpus, path) -> None:
    header = {"tokens": list(corpus.vocab.tokens)}
    if corpus.provenance:
        header["provenance"] = corpus.provenance
    lines = [_dumps(header)]
    for ex in corpus.examples:
        lines.append(_dumps({
            "src": list(ex.src),
            "tgt": list(ex.tgt),
            "noise_tag": ex.noise_tag,
            "noisy_tgt_positions": list(ex.noisy_tgt_positions),
        }))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


_EXAMPLE_KEYS = {"src", "tgt", "noise_tag", "noisy_tgt_positions"}


def read_corpus(path) -> ParallelCorpus:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusFormatError("empty corpus file: vocabulary header required", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or "tokens" not in header:
        raise CorpusFormatError('first line must be a vocabulary object {"tokens": [...]}', 1)
    try:
        vocab = Vocab(tuple(header["tokens"]))
    except InvalidInputError as exc:
        raise CorpusFormatError(str(exc), 1) from None
    V = len(vocab)
    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict) or set(rec) != _EXAMPLE_KEYS:
            raise CorpusFormatError(f"example must have exactly the keys {sorted(_EXAMPLE_KEYS)}", lineno)
        try:
            ex = ParallelExample(rec["src"], rec["tgt"], rec["noise_tag"], rec["noisy_tgt_positions"])
        except (InvalidInputError, TypeError, ValueError) as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        if any(not 0 <= i < V for i in ex.src + ex.tgt):
            raise CorpusFormatError(f"token id out of range for V={V}", lineno)
        examples.append(ex)
    return ParallelCorpus(tuple(examples), vocab, header.get("provenance", {}))
