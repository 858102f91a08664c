import math

import numpy as np
import pytest

from entlab.core import InvalidInputError, SeededRng
from entlab.data import EOS, ParallelExample, gen_cipher_corpus, make_batch
from entlab.model import (CheckpointError, ModelConfig, forward, generate_greedy, init_params,
                          load_checkpoint, save_checkpoint, token_inputs)
from entlab.objectives import ObjectiveConfig
from entlab.quality import score_batch
from entlab.training import Adam, TrainConfig, train

from helpers import gradient_check, random_batch


class TestForward:
    def test_zero_init_is_uniform(self):
        cfg = ModelConfig(vocab_size=9)
        params = init_params(cfg, SeededRng(0))
        batch = random_batch(np.random.default_rng(0), 9, n_examples=4)
        probs, _ = forward(params, token_inputs(batch, cfg))
        np.testing.assert_allclose(probs, 1 / 9, atol=1e-15)
        np.testing.assert_allclose(score_batch(probs, token_inputs(batch, cfg).targets).l2,
                                   math.sqrt(1 - 1 / 9), atol=1e-12)

    def test_token_inputs_layout(self):
        cfg = ModelConfig(vocab_size=8, context_window=2)
        batch = make_batch([ParallelExample((4, 5), (6, 7, 5))])
        inp = token_inputs(batch, cfg)
        np.testing.assert_array_equal(inp.targets, [6, 7, 5, EOS])
        np.testing.assert_array_equal(inp.prev, [[1, 1], [1, 6], [6, 7], [7, 5]])
        np.testing.assert_array_equal(inp.aligned, [4, 5, 1, 1])

    def test_padding_excluded(self):
        cfg = ModelConfig(vocab_size=8)
        batch = make_batch([ParallelExample((4,), (5,)), ParallelExample((4, 5, 6), (5, 6, 7))])
        assert token_inputs(batch, cfg).n_tokens == 2 + 4

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            token_inputs(make_batch([ParallelExample((4,), (9,))]), ModelConfig(vocab_size=8))

    def test_batch_invariance(self):
        cfg = ModelConfig(vocab_size=8, embed_dim=4, hidden_dim=5)
        params = init_params(cfg, SeededRng(1))
        params.w_out[...] = np.random.default_rng(1).normal(size=params.w_out.shape)
        a, b = ParallelExample((4, 5), (6, 7)), ParallelExample((7, 6, 5, 4), (4,))
        alone, _ = forward(params, token_inputs(make_batch([a]), cfg))
        both, _ = forward(params, token_inputs(make_batch([a, b]), cfg))
        np.testing.assert_allclose(both[: alone.shape[0]], alone, atol=1e-14)


class TestBackward:
    @pytest.mark.parametrize("use_source", [True, False])
    def test_fd_v6(self, use_source):
        cfg = ModelConfig(vocab_size=6, embed_dim=3, hidden_dim=4, context_window=2, use_source=use_source)
        batch = random_batch(np.random.default_rng(0), 6, n_examples=2)
        worst, _ = gradient_check(cfg, batch, ObjectiveConfig())
        assert worst < 1e-4

    def test_fd_empty_source(self):
        cfg = ModelConfig(vocab_size=6, embed_dim=2, hidden_dim=3, context_window=1)
        batch = make_batch([ParallelExample((), (4, 5)), ParallelExample((5, 4, 4), (5,))])
        worst, _ = gradient_check(cfg, batch, ObjectiveConfig())
        assert worst < 1e-4


class TestGreedy:
    def test_zero_model_emits_lowest_id(self):
        cfg = ModelConfig(vocab_size=6)
        params = init_params(cfg, SeededRng(0))
        # uniform rows: argmax tie goes to id 0 (PAD), decoding runs to max_len
        assert generate_greedy(params, cfg, (4, 5), 3) == (0, 0, 0)

    def test_stops_at_eos(self):
        cfg = ModelConfig(vocab_size=6)
        params = init_params(cfg, SeededRng(0))
        params.b_out[EOS] = 1.0
        assert generate_greedy(params, cfg, (4, 5), 5) == ()

    def test_batched_matches_single(self):
        cfg = ModelConfig(vocab_size=8, embed_dim=4, hidden_dim=6)
        params = init_params(cfg, SeededRng(2))
        params.w_out[...] = np.random.default_rng(2).normal(size=params.w_out.shape)
        srcs = [(4, 5, 6), (7,), ()]
        batched = generate_greedy(params, cfg, srcs, [5, 2, 4])
        assert batched == [generate_greedy(params, cfg, s, m) for s, m in zip(srcs, [5, 2, 4])]

    def test_learns_cipher(self):
        corpus = gen_cipher_corpus(5, 200, (2, 5), SeededRng(0))
        cfg = ModelConfig(vocab_size=len(corpus.vocab), embed_dim=8, hidden_dim=32)
        result = train(corpus, cfg, TrainConfig(epochs=30, learning_rate=0.05))
        ex = corpus[0]
        assert generate_greedy(result.params, cfg, ex.src, len(ex.tgt) + 3) == ex.tgt


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(vocab_size=7, embed_dim=3, hidden_dim=5, context_window=1, use_source=False)
        params = init_params(cfg, SeededRng(4))
        opt = Adam(params, 0.1)
        opt.step(params, params.copy())
        save_checkpoint(tmp_path / "m.bin", cfg, params, opt)
        cfg2, params2, state = load_checkpoint(tmp_path / "m.bin")
        assert cfg2 == cfg and params2 == params
        assert state["kind"] == "adam" and state["step"] == 1
        for a, b in zip(state["m"], opt.m):
            np.testing.assert_array_equal(a, b)
        save_checkpoint(tmp_path / "n.bin", cfg2, params2, opt)
        assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "n.bin").read_bytes()

    def test_without_optimizer(self, tmp_path):
        cfg = ModelConfig(vocab_size=5, embed_dim=2, hidden_dim=2)
        save_checkpoint(tmp_path / "m.bin", cfg, init_params(cfg, SeededRng(0)))
        assert load_checkpoint(tmp_path / "m.bin")[2] is None

    @pytest.mark.parametrize("mangle", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
    def test_corrupt(self, tmp_path, mangle):
        cfg = ModelConfig(vocab_size=5, embed_dim=2, hidden_dim=2)
        save_checkpoint(tmp_path / "m.bin", cfg, init_params(cfg, SeededRng(0)))
        (tmp_path / "m.bin").write_bytes(mangle((tmp_path / "m.bin").read_bytes()))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.bin")
