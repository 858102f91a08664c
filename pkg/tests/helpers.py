"""Shared oracles for the test suite."""

import numpy as np

from entlab.core import SeededRng
from entlab.data import ParallelExample, make_batch
from entlab.model import ModelConfig, backward, forward, init_params, token_inputs
from entlab.objectives import apply_objective, loss_with_fixed_mask
from entlab.quality import score_batch


def random_batch(rng, V, n_examples=2, max_len=4):
    """Random examples over the regular ids ``4..V-1``."""
    examples = []
    for _ in range(n_examples):
        ls, lt = rng.integers(0, max_len + 1), rng.integers(1, max_len + 1)
        examples.append(ParallelExample(tuple(rng.integers(4, V, ls)), tuple(rng.integers(4, V, lt))))
    return make_batch(examples)


def gradient_check(config: ModelConfig, batch, objective, iteration=0, seed=0, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The objective's weights and kept count are computed once at the
    unperturbed point and held fixed while perturbing. ``objective`` may
    also be a callable mapping the unperturbed error norms to a config.
    """
    params = init_params(config, SeededRng(seed), scale=0.8)
    r = np.random.default_rng(seed)
    params.w_out[...] = r.uniform(-0.8, 0.8, params.w_out.shape)
    params.b_out[...] = r.uniform(-0.8, 0.8, params.b_out.shape)
    inputs = token_inputs(batch, config)
    probs, cache = forward(params, inputs)
    if callable(objective):
        objective = objective(score_batch(probs, inputs.targets).l2)
    res = apply_objective(probs, inputs.targets, inputs.example, objective, iteration)
    grads = backward(params, cache, res.logit_gradient)

    def loss():
        p, _ = forward(params, inputs)
        return loss_with_fixed_mask(p, inputs.targets, res.weights, res.mask.kept_count)

    worst = 0.0
    for tensor, g in zip(params, grads):
        flat, gflat = tensor.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            fd = (up - down) / (2 * h)
            err = abs(fd - gflat[i]) / max(1e-6, abs(fd) + abs(gflat[i]))
            worst = max(worst, err)
    return worst, res


# acceptance verdicts, echoed in the terminal summary
VERDICTS = []


def verdict(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok
