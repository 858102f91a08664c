"""A context-window MLP next-token model with hand-written gradients.

For target position ``t`` the input feature is the concatenation of

* embeddings of the ``k`` previous target tokens (BOS before the start),
* the embedding of the aligned source token ``src[t]`` (BOS past the end or
  when the model ignores the source),
* the mean embedding of all source tokens (BOS embedding when empty or
  ignored),

followed by ``tanh`` and a softmax output layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidInputError, SeededRng, stable_softmax
from .data import BOS, EOS, PAD, Batch, ParallelCorpus, ParallelExample, make_batch

PARAM_NAMES = ("embedding", "w_in", "b_in", "w_out", "b_out")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 64
    context_window: int = 2
    use_source: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "context_window"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")

    @property
    def feature_dim(self) -> int:
        return (self.context_window + 2) * self.embed_dim


@dataclass
class ModelParams:
    embedding: np.ndarray  # (V, E)
    w_in: np.ndarray       # ((k+2)E, H)
    b_in: np.ndarray       # (H,)
    w_out: np.ndarray      # (H, V)
    b_out: np.ndarray      # (V,)

    def tensors(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(*(t.copy() for t in self.tensors()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(t) for t in self.tensors()))

    def __iter__(self):
        return iter(self.tensors())

    def __eq__(self, other):
        return isinstance(other, ModelParams) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self, other)
        )


def init_params(config: ModelConfig, rng: SeededRng, scale: float = 0.5) -> ModelParams:
    """Uniform(-scale, scale) embeddings and input layer; zero output layer."""
    if scale < 0:
        raise InvalidInputError("scale must be >= 0")
    V, E, H = config.vocab_size, config.embed_dim, config.hidden_dim
    emb = rng.uniform(-scale, scale, size=(V, E))
    w_in = rng.uniform(-scale, scale, size=(config.feature_dim, H))
    b_in = rng.uniform(-scale, scale, size=H)
    return ModelParams(emb, w_in, b_in, np.zeros((H, V)), np.zeros(V))


@dataclass(frozen=True)
class TokenInputs:
    """Index view of the non-padding target positions of a batch."""

    prev: np.ndarray         # (N, k) previous target ids, oldest first
    aligned: np.ndarray      # (N,) aligned source id
    example: np.ndarray      # (N,) row of the batch the token belongs to
    position: np.ndarray     # (N,) target position
    targets: np.ndarray      # (N,)
    noisy: np.ndarray        # (N,) bool
    src: np.ndarray          # (B, Ls)
    src_mask: np.ndarray     # (B, Ls) bool

    @property
    def n_tokens(self):
        return int(self.targets.size)


def token_inputs(batch: Batch, config: ModelConfig) -> TokenInputs:
    k = config.context_window
    B, Lt = batch.tgt.shape
    rows, cols = np.nonzero(batch.tgt_mask)
    padded = np.concatenate([np.full((B, k), BOS, dtype=np.int64), batch.tgt], axis=1)
    # prev[:, j] = tgt[t - k + j]; the BOS prefix covers t - k + j < 0
    prev = np.stack([padded[rows, cols + j] for j in range(k)], axis=1)
    if config.use_source:
        Ls = batch.src.shape[1]
        in_src = cols < batch.src_len[rows]
        aligned = np.where(in_src, batch.src[rows, np.minimum(cols, Ls - 1)], BOS)
        src_mask = np.arange(Ls)[None, :] < batch.src_len[:, None]
    else:
        aligned = np.full(rows.size, BOS, dtype=np.int64)
        src_mask = np.zeros_like(batch.src, dtype=bool)
    V = config.vocab_size
    for ids in (batch.tgt[batch.tgt_mask], batch.src[src_mask]):
        if ids.size and (ids.min() < 0 or ids.max() >= V):
            raise InvalidInputError(f"token id out of range for V={V}")
    return TokenInputs(prev, aligned.astype(np.int64), rows, cols, batch.tgt[rows, cols],
                       batch.noisy[rows, cols], batch.src, src_mask)


@dataclass
class ForwardCache:
    inputs: TokenInputs
    features: np.ndarray
    hidden: np.ndarray
    src_count: np.ndarray
    probs: np.ndarray


def _source_means(params, inputs):
    count = inputs.src_mask.sum(axis=1)
    summed = (params.embedding[inputs.src] * inputs.src_mask[..., None]).sum(axis=1)
    means = np.where(count[:, None] > 0, summed / np.maximum(count, 1)[:, None],
                     params.embedding[BOS][None, :])
    return means, count


def forward(params: ModelParams, inputs: TokenInputs):
    """Predicted rows for every token; returns ``(probs, cache)``."""
    emb = params.embedding
    N, k = inputs.prev.shape
    means, count = _source_means(params, inputs)
    feats = np.concatenate(
        [emb[inputs.prev].reshape(N, -1), emb[inputs.aligned], means[inputs.example]], axis=1
    )
    hidden = np.tanh(feats @ params.w_in + params.b_in)
    probs = stable_softmax(hidden @ params.w_out + params.b_out) if N else np.zeros((0, emb.shape[0]))
    return probs, ForwardCache(inputs, feats, hidden, count, probs)


def backward(params: ModelParams, cache: ForwardCache, logit_gradient) -> ModelParams:
    """Exact parameter gradient given ``d loss / d logits`` per token."""
    g = np.asarray(logit_gradient, dtype=np.float64)
    if g.shape != cache.probs.shape:
        raise InvalidInputError(f"logit gradient shape {g.shape} != {cache.probs.shape}")
    inp = cache.inputs
    N, k = inp.prev.shape
    E = params.embedding.shape[1]
    grads = params.zeros_like()
    grads.w_out = cache.hidden.T @ g
    grads.b_out = g.sum(axis=0)
    d_pre = (g @ params.w_out.T) * (1.0 - cache.hidden ** 2)
    grads.w_in = cache.features.T @ d_pre
    grads.b_in = d_pre.sum(axis=0)
    d_feat = d_pre @ params.w_in.T

    d_emb = grads.embedding
    np.add.at(d_emb, inp.prev.ravel(), d_feat[:, : k * E].reshape(N * k, E))
    np.add.at(d_emb, inp.aligned, d_feat[:, k * E : (k + 1) * E])
    B = inp.src.shape[0]
    d_mean = np.zeros((B, E))
    np.add.at(d_mean, inp.example, d_feat[:, (k + 1) * E :])
    has_src = cache.src_count > 0
    d_emb[BOS] += d_mean[~has_src].sum(axis=0)
    scaled = d_mean / np.maximum(cache.src_count, 1)[:, None]
    rows, cols = np.nonzero(inp.src_mask)
    np.add.at(d_emb, inp.src[rows, cols], scaled[rows])
    return grads


def predict(params: ModelParams, config: ModelConfig, batch: Batch):
    inputs = token_inputs(batch, config)
    probs, _ = forward(params, inputs)
    return probs, inputs


def generate_greedy(params: ModelParams, config: ModelConfig, sources, max_len: int):
    """Greedy decoding for a list of source sequences.

    Decoding stops at EOS (not included in the output) or after ``max_len``
    tokens. Argmax ties go to the lowest id.

    Args:
        sources: A single source sequence or a list of them.
        max_len: Either an int or one limit per source.
    """
    single = len(sources) == 0 or np.isscalar(sources[0])
    srcs = [tuple(sources)] if single else [tuple(s) for s in sources]
    limits = np.broadcast_to(np.asarray(max_len, dtype=np.int64), (len(srcs),))
    if np.any(limits < 1):
        raise InvalidInputError("max_len must be >= 1")
    B, k, T = len(srcs), config.context_window, int(limits.max())
    shell = make_batch([ParallelExample(s, ()) for s in srcs])
    src_mask = (np.arange(shell.src.shape[1])[None, :] < shell.src_len[:, None]) if config.use_source \
        else np.zeros_like(shell.src, dtype=bool)
    out = np.full((B, T), PAD, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    history = np.full((B, k + T), BOS, dtype=np.int64)
    Ls = shell.src.shape[1]
    for t in range(T):
        active = np.nonzero(~done & (t < limits))[0]
        if active.size == 0:
            break
        if config.use_source:
            in_src = t < shell.src_len[active]
            aligned = np.where(in_src, shell.src[active, min(t, Ls - 1)], BOS)
        else:
            aligned = np.full(active.size, BOS, dtype=np.int64)
        inputs = TokenInputs(
            prev=history[active, t : t + k], aligned=aligned, example=np.arange(active.size),
            position=np.full(active.size, t), targets=np.zeros(active.size, dtype=np.int64),
            noisy=np.zeros(active.size, dtype=bool), src=shell.src[active], src_mask=src_mask[active],
        )
        probs, _ = forward(params, inputs)
        nxt = np.argmax(probs, axis=1)
        history[active, t + k] = nxt
        stop = nxt == EOS
        emit = active[~stop]
        out[emit, t] = nxt[~stop]
        lengths[emit] = t + 1
        done[active[stop]] = True
    decoded = [tuple(int(x) for x in out[b, : lengths[b]]) for b in range(B)]
    return decoded[0] if single else decoded


# --------------------------------------------------------------------------
# checkpoints
#
# Layout (little endian):
#   magic b"ENTM" | u32 version | 5 x i64: V, E, H, k, use_source
#   parameter tensors in PARAM_NAMES order as float64, row-major
#   u32 optimizer kind (0 none, 1 sgd, 2 adam)
#   adam only: i64 step, then first-moment tensors, then second-moment tensors

MAGIC = b"ENTM"
VERSION = 1
OPT_KINDS = {None: 0, "sgd": 1, "adam": 2}


class CheckpointError(ValueError):
    pass


def param_shapes(config: ModelConfig):
    V, E, H = config.vocab_size, config.embed_dim, config.hidden_dim
    return [(V, E), (config.feature_dim, H), (H,), (H, V), (V,)]


def save_checkpoint(path, config: ModelConfig, params: ModelParams, optimizer=None) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<5q", config.vocab_size, config.embed_dim, config.hidden_dim,
                             config.context_window, int(config.use_source)))
    for t in params:
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    kind = getattr(optimizer, "kind", None)
    parts.append(struct.pack("<I", OPT_KINDS[kind]))
    if kind == "adam":
        parts.append(struct.pack("<q", optimizer.step_count))
        for t in list(optimizer.m) + list(optimizer.v):
            parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(config, params, optimizer_state)``.

    ``optimizer_state`` is ``None`` or a dict with ``kind`` and, for Adam,
    ``step``, ``m`` and ``v``.
    """
    blob = Path(path).read_bytes()
    try:
        return _parse_checkpoint(blob)
    except struct.error:
        raise CheckpointError("truncated checkpoint") from None


def _parse_checkpoint(blob):
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    V, E, H, k, use_src = struct.unpack_from("<5q", blob, 8)
    config = ModelConfig(V, E, H, k, bool(use_src))
    off = 8 + 40

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 8 * n > len(blob):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        return arr

    shapes = param_shapes(config)
    params = ModelParams(*(take(s) for s in shapes))
    state = None
    if off < len(blob):
        (kind_id,) = struct.unpack_from("<I", blob, off)
        off += 4
        kind = {v: k_ for k_, v in OPT_KINDS.items()}.get(kind_id, "?")
        if kind == "?":
            raise CheckpointError(f"unknown optimizer kind {kind_id}")
        if kind == "adam":
            (step,) = struct.unpack_from("<q", blob, off)
            off += 8
            m = [take(s) for s in shapes]
            v = [take(s) for s in shapes]
            state = {"kind": "adam", "step": step, "m": m, "v": v}
        elif kind == "sgd":
            state = {"kind": "sgd"}
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return config, params, state


def corpus_inputs(corpus: ParallelCorpus, config: ModelConfig, batch_size: int = 512):
    """Yield ``(first_example_index, TokenInputs)`` over a corpus in order."""
    for start in range(0, len(corpus), batch_size):
        batch = make_batch(corpus.examples[start : start + batch_size])
        yield start, token_inputs(batch, config)

