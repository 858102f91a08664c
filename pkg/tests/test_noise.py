import math

import numpy as np
import pytest

from entlab.core import InvalidInputError, SeededRng
from entlab.data import ParallelExample, Vocab, gen_cipher_corpus
from entlab.noise import NoiseSpec, inject, inject_shuffle


@pytest.fixture(scope="module")
def corpus():
    return gen_cipher_corpus(26, 1000, (4, 12), SeededRng(0))


class TestCopy:
    def test_replace_count(self, corpus):
        noisy = inject(corpus, NoiseSpec("copy", 0.3, 1))
        copied = [ex for ex in noisy if ex.noise_tag == "copy"]
        assert len(noisy) == 1000 and len(copied) == 300
        assert all(ex.tgt == ex.src and ex.noisy_tgt_positions == tuple(range(len(ex.tgt))) for ex in copied)

    def test_append(self, corpus):
        noisy = inject(corpus, NoiseSpec("copy", 0.5, 1, "append"))
        assert len(noisy) == 1500
        assert noisy.examples[:1000] == corpus.examples
        assert sum(ex.noise_tag == "copy" for ex in noisy) == 500

    def test_deterministic(self, corpus):
        a = inject(corpus, NoiseSpec("copy", 0.2, 5))
        b = inject(corpus, NoiseSpec("copy", 0.2, 5))
        c = inject(corpus, NoiseSpec("copy", 0.2, 6))
        assert a.examples == b.examples and a.examples != c.examples

    def test_zero_rate(self, corpus):
        assert inject(corpus, NoiseSpec("copy", 0.0)).examples == corpus.examples


class TestShuffle:
    def test_two_tokens_swap(self):
        v = Vocab.for_alphabet(3)
        c = gen_cipher_corpus(3, 1, (1, 1), SeededRng(0)).with_examples([ParallelExample((4, 5), v.encode("ab"))])
        noisy = inject_shuffle(c, NoiseSpec("shuffle", 1.0))
        assert v.decode(noisy[0].tgt) == ["b", "a"]
        assert noisy[0].noise_tag == "shuffle"

    def test_count_and_multiset(self, corpus):
        noisy = inject(corpus, NoiseSpec("shuffle", 0.2, 3))
        changed = [(a, b) for a, b in zip(corpus, noisy) if b.noise_tag == "shuffle"]
        assert len(changed) == math.floor(0.2 * 1000)
        for a, b in changed:
            assert sorted(a.tgt) == sorted(b.tgt) and a.tgt != b.tgt

    def test_too_few_eligible(self):
        c = gen_cipher_corpus(3, 1, (1, 1), SeededRng(0))
        with pytest.raises(InvalidInputError):
            inject(c, NoiseSpec("shuffle", 1.0))


class TestSubstitution:
    def test_binomial_bound(self):
        c = gen_cipher_corpus(26, 1000, (10, 10), SeededRng(0))
        noisy = inject(c, NoiseSpec("substitution", 0.1, 2))
        n = sum(len(ex.noisy_tgt_positions) for ex in noisy)
        assert abs(n - 1000) <= 3 * math.sqrt(10_000 * 0.1 * 0.9)

    def test_labels_exact(self, corpus):
        noisy = inject(corpus, NoiseSpec("substitution", 0.3, 2))
        for a, b in zip(corpus, noisy):
            diff = tuple(i for i, (x, y) in enumerate(zip(a.tgt, b.tgt)) if x != y)
            assert diff == b.noisy_tgt_positions
            assert all(4 <= t < len(corpus.vocab) for t in b.tgt)

    def test_append_rejected(self):
        with pytest.raises(InvalidInputError):
            NoiseSpec("substitution", 0.1, mode="append")


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(kind="drop", rate=0.1), dict(kind="copy", rate=1.5),
                                    dict(kind="copy", rate=0.1, mode="insert")])
    def test_rejects(self, kw):
        with pytest.raises(InvalidInputError):
            NoiseSpec(**kw)

    def test_provenance(self, corpus):
        noisy = inject(inject(corpus, NoiseSpec("copy", 0.1)), NoiseSpec("substitution", 0.1))
        assert [n["kind"] for n in noisy.provenance["noise"]] == ["copy", "substitution"]
