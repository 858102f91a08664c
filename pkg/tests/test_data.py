import json

import numpy as np
import pytest

from entlab.core import InvalidInputError, SeededRng
from entlab.data import (BOS, EOS, PAD, CorpusFormatError, ParallelExample, Vocab, cipher_map,
                         gen_cipher_corpus, make_batch, make_batches, prune_corpus, read_corpus,
                         sentence_mean_scores, split_corpus, write_corpus)


class TestVocab:
    def test_reserved(self):
        v = Vocab.for_alphabet(3)
        assert (PAD, BOS, EOS) == (v.id("<pad>"), v.id("<bos>"), v.id("<eos>"))
        assert v.decode(v.encode(["a", "c"])) == ["a", "c"]
        assert len(v) == 7

    def test_rejects(self):
        with pytest.raises(InvalidInputError):
            Vocab(("a", "b"))
        with pytest.raises(InvalidInputError):
            Vocab(("<pad>", "<bos>", "<eos>", "<sep>", "a", "a"))


class TestExample:
    def test_noisy_positions_validated(self):
        with pytest.raises(InvalidInputError):
            ParallelExample((4,), (5,), "copy", (3,))
        with pytest.raises(InvalidInputError):
            ParallelExample((4,), (5,), "clean", (0,))
        with pytest.raises(InvalidInputError):
            ParallelExample((4,), (5,), "bogus")


class TestCipher:
    def test_deterministic(self):
        a = gen_cipher_corpus(26, 50, (4, 12), SeededRng(1))
        b = gen_cipher_corpus(26, 50, (4, 12), SeededRng(1))
        assert a.examples == b.examples

    def test_is_cipher(self):
        c = gen_cipher_corpus(10, 200, (4, 12), SeededRng(2))
        mapping = cipher_map(c)
        assert sorted(mapping.values()) == sorted(mapping)
        assert all(k != v for k, v in mapping.items())
        for ex in c:
            assert 4 <= len(ex.src) <= 12
            assert ex.tgt == tuple(mapping[s] for s in ex.src)

    @pytest.mark.parametrize("args", [(1, 5, (1, 2)), (5, 0, (1, 2)), (5, 5, (3, 2)), (5, 5, (0, 2))])
    def test_rejects(self, args):
        with pytest.raises(InvalidInputError):
            gen_cipher_corpus(*args, SeededRng(0))

    def test_split(self):
        c = gen_cipher_corpus(5, 10, (1, 3), SeededRng(0))
        tr, ho = split_corpus(c, 3)
        assert tr.examples + ho.examples == c.examples and len(ho) == 3


class TestBatching:
    def test_sizes(self, small_corpus):
        c = small_corpus.with_examples(small_corpus.examples[:10])
        assert [len(b) for b in make_batches(c, 4)] == [4, 4, 2]

    def test_shuffled_is_permutation(self, small_corpus):
        idx = np.concatenate([b.indices for b in make_batches(small_corpus, 7, SeededRng(0))])
        assert sorted(idx.tolist()) == list(range(len(small_corpus)))

    def test_padding_and_eos(self):
        b = make_batch([ParallelExample((4,), (5, 6), "substitution", (1,)), ParallelExample((4, 5, 6), (7,))])
        np.testing.assert_array_equal(b.tgt, [[5, 6, EOS], [7, EOS, PAD]])
        np.testing.assert_array_equal(b.tgt_mask, [[1, 1, 1], [1, 1, 0]])
        np.testing.assert_array_equal(b.noisy, [[0, 1, 0], [0, 0, 0]])
        assert b.n_tokens == 5

    def test_rejects(self, small_corpus):
        with pytest.raises(InvalidInputError):
            make_batches(small_corpus, 0)


class TestPruning:
    def _corpus(self, n):
        return gen_cipher_corpus(5, n, (1, 3), SeededRng(0))

    def test_highest(self):
        c = self._corpus(4)
        pruned = prune_corpus(c, [1, 9, 3, 7], 0.5)
        assert pruned.examples == (c[0], c[2])

    def test_random_count_and_determinism(self):
        c = self._corpus(20)
        a = prune_corpus(c, np.zeros(20), 0.3, "random", SeededRng(1))
        b = prune_corpus(c, np.zeros(20), 0.3, "random", SeededRng(1))
        assert len(a) == 14 and a.examples == b.examples

    def test_rejects(self):
        c = self._corpus(4)
        with pytest.raises(InvalidInputError):
            prune_corpus(c, [1, 2, 3], 0.5)
        with pytest.raises(InvalidInputError):
            prune_corpus(c, [1, 2, 3, 4], 0.5, "random")
        with pytest.raises(InvalidInputError):
            prune_corpus(c, [1, 2, 3, 4], 1.0)

    def test_sentence_means(self):
        c = self._corpus(2)
        np.testing.assert_allclose(sentence_mean_scores(c, [np.array([1.0, 3.0]), np.array([2.0])]), [2.0, 2.0])


class TestIO:
    def test_round_trip_bytes(self, tmp_path):
        c = gen_cipher_corpus(26, 1000, (4, 12), SeededRng(0))
        write_corpus(c, tmp_path / "a.jsonl")
        back = read_corpus(tmp_path / "a.jsonl")
        assert back.examples == c.examples and back.vocab == c.vocab
        write_corpus(back, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def _write(self, tmp_path, lines):
        p = tmp_path / "c.jsonl"
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_errors_carry_line_numbers(self, tmp_path):
        header = json.dumps({"tokens": list(Vocab.for_alphabet(3).tokens)})
        good = json.dumps({"src": [4], "tgt": [5], "noise_tag": "clean", "noisy_tgt_positions": []})
        cases = {
            "{": 1,
            header + "\n" + good + "\nnot json": 3,
            header + "\n" + json.dumps({"src": [4], "tgt": [9], "noise_tag": "clean",
                                        "noisy_tgt_positions": []}): 2,
            header + "\n" + json.dumps({"src": [4], "tgt": [5]}): 2,
        }
        for text, line in cases.items():
            p = self._write(tmp_path, [text])
            with pytest.raises(CorpusFormatError) as err:
                read_corpus(p)
            assert err.value.lineno == line

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        with pytest.raises(CorpusFormatError):
            read_corpus(tmp_path / "e.jsonl")
