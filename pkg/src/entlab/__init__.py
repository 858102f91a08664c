"""Error-norm truncation on a desk-scale conditional language model.

The package trains a small autoregressive model on a synthetic cipher
translation task, injects copy/shuffle/substitution noise, and compares
plain MLE with Loss Truncation, TaiLr and error-norm truncation.
"""

from .core import (DivergenceError, InvalidInputError, SeededRng, select_desc_threshold,
                   stable_log_softmax, stable_softmax)
from .data import (ParallelCorpus, ParallelExample, Vocab, gen_cipher_corpus, make_batches,
                   prune_corpus, read_corpus, split_corpus, write_corpus)
from .model import (ModelConfig, ModelParams, backward, forward, generate_greedy, init_params,
                    load_checkpoint, save_checkpoint)
from .noise import NoiseSpec, inject, inject_copy, inject_shuffle, inject_substitution
from .objectives import (ObjectiveConfig, Strategy, apply_objective, ent_fraction_mask,
                         ent_threshold_mask, loss_truncation_mask, tailr_weight)
from .quality import (error_l1_norm, error_l2_norm, renyi2_entropy, score_batch, token_nll,
                      tvd_to_point_mass)
from .training import (MetricsReport, TrainConfig, auroc, histogram_overlap, perplexity,
                       separation_report, sequence_metrics, train)

__version__ = "0.1.0"
