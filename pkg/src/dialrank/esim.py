"""ESIM-style response ranker with character-composed token embeddings.

Both sequences are encoded by a shared BiLSTM over [word vector;
char-BiLSTM final states], aligned against each other through dot-product
co-attention, enriched with difference/product features, aggregated by a
second shared BiLSTM, pooled (masked max + final states) and scored by a
two-layer MLP with a sigmoid output.

Word embeddings are fixed by default (set ``trainable_word_embeddings`` to
tune them); the character one-hot basis is always fixed. Out-of-vocabulary
words get zero word vectors, with the character composition still
informative.
"""

from __future__ import annotations

import string
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from . import tensor as T
from .corpus import DialogueExample, RankingGroup, Vocabulary, truncate
from .embed import EmbeddingTable
from .recurrent import BiLstmParams, bilstm, init_bilstm
from .tensor import Tensor

# 68 encodable characters (lowercase letters, digits, ASCII punctuation);
# the final slot (index 68) absorbs every other character.
ALPHABET = string.ascii_lowercase + string.digits + string.punctuation
CHAR_UNK = len(ALPHABET)
CHAR_ALPHABET_SIZE = len(ALPHABET) + 1
_CHAR_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}

NEG_INF = -1e30


class CheckpointError(ValueError):
    """A checkpoint is missing tensors or disagrees with this build."""


@dataclass
class EsimConfig:
    word_dim: int
    char_hidden: int = 40
    ctx_hidden: int = 200
    mlp_hidden: int = 256
    char_alphabet_size: int = CHAR_ALPHABET_SIZE
    batch_size: int = 128
    initial_lr: float = 0.001
    lr_decay_rate: float = 0.96
    lr_decay_steps: int = 5000
    max_context: int = 160
    max_response: int = 40
    max_token_chars: int = 20
    trainable_word_embeddings: bool = False
    epochs: int = 10
    max_steps: int | None = None
    clip_norm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in (
            "word_dim",
            "char_hidden",
            "ctx_hidden",
            "mlp_hidden",
            "batch_size",
            "lr_decay_steps",
            "max_context",
            "max_response",
            "max_token_chars",
            "epochs",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.char_alphabet_size != CHAR_ALPHABET_SIZE:
            raise ValueError(f"char_alphabet_size must be exactly {CHAR_ALPHABET_SIZE}")
        if self.initial_lr <= 0 or self.lr_decay_rate <= 0:
            raise ValueError("initial_lr and lr_decay_rate must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 when set")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")


@dataclass
class EsimParams:
    word_embedding: Tensor  # [vocab, word_dim]; row 0 (pad) stays all-zero
    char_onehot: Tensor  # [69, 69] fixed identity basis
    char_lstm: BiLstmParams
    ctx_lstm: BiLstmParams
    agg_lstm: BiLstmParams
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        """Every persisted tensor, in a stable order. The one-hot basis is
        reconstructed from the alphabet rather than stored."""
        out: dict[str, Tensor] = {"word_embedding": self.word_embedding}
        for prefix, bi in (("char", self.char_lstm), ("ctx", self.ctx_lstm), ("agg", self.agg_lstm)):
            for direction, p in (("fwd", bi.fwd), ("bwd", bi.bwd)):
                out[f"{prefix}_{direction}_wx"] = p.w_x
                out[f"{prefix}_{direction}_wh"] = p.w_h
                out[f"{prefix}_{direction}_b"] = p.b
        out["mlp_w1"] = self.mlp_w1
        out["mlp_b1"] = self.mlp_b1
        out["mlp_w2"] = self.mlp_w2
        out["mlp_b2"] = self.mlp_b2
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.named_tensors().items() if t.requires_grad}


def char_ids(token: str, max_chars: int = 20) -> list[int]:
    """Map a token's characters into the 69-slot alphabet (capped length)."""
    if not token:
        raise ValueError("cannot encode an empty token")
    return [_CHAR_INDEX.get(ch, CHAR_UNK) for ch in token[:max_chars]]


def build_embedding_matrix(vocab: Vocabulary, table: EmbeddingTable) -> np.ndarray:
    """Vocabulary-aligned matrix; pad/unknown rows and uncovered tokens are zero."""
    matrix = np.zeros((len(vocab), table.dim), dtype=np.float64)
    for token, _ in vocab.items():
        vec = table.get(token)
        if vec is not None:
            matrix[vocab.id_of(token)] = vec
    return matrix


def init_params(config: EsimConfig, embedding_matrix: np.ndarray, rng: np.random.Generator) -> EsimParams:
    matrix = np.asarray(embedding_matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != config.word_dim:
        raise ValueError(f"embedding matrix shape {matrix.shape} does not match word_dim={config.word_dim}")
    if matrix.shape[0] < 2 or np.any(matrix[0] != 0.0):
        raise ValueError("embedding matrix needs >= 2 rows and an all-zero pad row 0")
    repr_in = config.word_dim + 2 * config.char_hidden
    return EsimParams(
        word_embedding=Tensor(matrix, requires_grad=config.trainable_word_embeddings),
        char_onehot=Tensor(np.eye(config.char_alphabet_size)),
        char_lstm=init_bilstm(rng, config.char_alphabet_size, config.char_hidden),
        ctx_lstm=init_bilstm(rng, repr_in, config.ctx_hidden),
        agg_lstm=init_bilstm(rng, 8 * config.ctx_hidden, config.ctx_hidden),
        mlp_w1=T.glorot_uniform(rng, 8 * config.ctx_hidden, config.mlp_hidden),
        mlp_b1=T.zeros((config.mlp_hidden,), requires_grad=True),
        mlp_w2=T.glorot_uniform(rng, config.mlp_hidden, 1),
        mlp_b2=T.zeros((1,), requires_grad=True),
    )


@dataclass
class Batch:
    ctx_ids: np.ndarray  # [B, Lc] int
    ctx_chars: np.ndarray  # [B, Lc, Cc] int
    ctx_char_len: np.ndarray  # [B, Lc] int
    ctx_len: np.ndarray  # [B] int
    rsp_ids: np.ndarray
    rsp_chars: np.ndarray
    rsp_char_len: np.ndarray
    rsp_len: np.ndarray
    labels: np.ndarray | None
    ctx_tokens: list[tuple[str, ...]]
    rsp_tokens: list[tuple[str, ...]]

    @property
    def size(self) -> int:
        return len(self.ctx_len)


def _encode_side(sequences: list[tuple[str, ...]], vocab: Vocabulary, max_token_chars: int):
    batch = len(sequences)
    max_len = max(len(s) for s in sequences)
    char_lists = [[char_ids(tok, max_token_chars) for tok in s] for s in sequences]
    max_chars = max((len(c) for cl in char_lists for c in cl), default=1)
    ids = np.zeros((batch, max_len), dtype=np.int64)
    chars = np.full((batch, max_len, max_chars), CHAR_UNK, dtype=np.int64)
    char_len = np.ones((batch, max_len), dtype=np.int64)
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    for b, seq in enumerate(sequences):
        for t, tok in enumerate(seq):
            ids[b, t] = vocab.id_of(tok)
            cl = char_lists[b][t]
            chars[b, t, : len(cl)] = cl
            char_len[b, t] = len(cl)
    return ids, chars, char_len, lengths


def make_batch(examples: Sequence[DialogueExample], vocab: Vocabulary, config: EsimConfig) -> Batch:
    """Truncate, map to ids and pad a batch of examples."""
    if not examples:
        raise ValueError("empty batch")
    clipped = [truncate(ex, config.max_context, config.max_response) for ex in examples]
    ctx = [ex.context for ex in clipped]
    rsp = [ex.response for ex in clipped]
    ctx_ids, ctx_chars, ctx_char_len, ctx_len = _encode_side(ctx, vocab, config.max_token_chars)
    rsp_ids, rsp_chars, rsp_char_len, rsp_len = _encode_side(rsp, vocab, config.max_token_chars)
    labels = np.array([ex.label for ex in clipped], dtype=np.float64)
    return Batch(
        ctx_ids, ctx_chars, ctx_char_len, ctx_len,
        rsp_ids, rsp_chars, rsp_char_len, rsp_len,
        labels, ctx, rsp,
    )


def length_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """Boolean [batch, max_len] mask, True at valid positions."""
    return np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]


def _char_compose_batch(chars: np.ndarray, char_len: np.ndarray, params: EsimParams) -> Tensor:
    batch, max_len, max_chars = chars.shape
    onehot = T.embedding_lookup(params.char_onehot, chars.reshape(batch * max_len, max_chars))
    _, last = bilstm(onehot, char_len.reshape(batch * max_len), params.char_lstm)
    return T.reshape(last, (batch, max_len, 2 * params.char_lstm.n_hidden))


def char_compose(token: str, params: EsimParams, max_chars: int = 20) -> np.ndarray:
    """Character-composed embedding of one token: the char-BiLSTM's forward
    final state concatenated with its backward final state."""
    ids = np.array([char_ids(token, max_chars)], dtype=np.int64)
    onehot = T.embedding_lookup(params.char_onehot, ids)
    _, last = bilstm(onehot, np.array([ids.shape[1]]), params.char_lstm)
    return last.data[0]


def _word_representation(ids: np.ndarray, chars: np.ndarray, char_len: np.ndarray, params: EsimParams) -> Tensor:
    word_part = T.embedding_lookup(params.word_embedding, ids)
    char_part = _char_compose_batch(chars, char_len, params)
    return T.concat([word_part, char_part], axis=2)


def represent(word_ids, char_id_lists, params: EsimParams) -> Tensor:
    """Per-token [word vector; char composition] for one sequence.

    ``word_ids`` are vocabulary ids (0 pad / 1 unknown give zero word parts);
    ``char_id_lists`` holds each token's character ids.
    """
    n = len(word_ids)
    if n != len(char_id_lists):
        raise ValueError(f"{n} word ids but {len(char_id_lists)} char sequences")
    max_chars = max(len(c) for c in char_id_lists)
    ids = np.asarray(word_ids, dtype=np.int64)[None, :]
    chars = np.full((1, n, max_chars), CHAR_UNK, dtype=np.int64)
    char_len = np.ones((1, n), dtype=np.int64)
    for t, cl in enumerate(char_id_lists):
        if not cl:
            raise ValueError(f"token {t} has no character ids")
        chars[0, t, : len(cl)] = cl
        char_len[0, t] = len(cl)
    return _word_representation(ids, chars, char_len, params)[0]


def attend(a_bar: Tensor, b_bar: Tensor, a_mask=None, b_mask=None, return_weights: bool = False):
    """Dot-product co-attention between the two encoded sequences.

    Returns (a_tilde, b_tilde, e): per context position the softmax-weighted
    response vector, per response position the softmax-weighted context
    vector, and the raw similarity matrix e[i, j] = a_bar[i] . b_bar[j].
    Masked positions get exactly zero attention weight. Accepts [len, d] or
    [batch, len, d] inputs.
    """
    unbatched = a_bar.ndim == 2
    if unbatched:
        if b_bar.ndim != 2:
            raise T.ShapeError(f"mixed batched/unbatched inputs: {a_bar.shape} vs {b_bar.shape}")
        a_bar = T.reshape(a_bar, (1,) + a_bar.shape)
        b_bar = T.reshape(b_bar, (1,) + b_bar.shape)
        if a_mask is not None:
            a_mask = np.asarray(a_mask, dtype=bool)[None, :]
        if b_mask is not None:
            b_mask = np.asarray(b_mask, dtype=bool)[None, :]
    n_batch, m, _ = a_bar.shape
    n = b_bar.shape[1]
    if a_mask is None:
        a_mask = np.ones((n_batch, m), dtype=bool)
    if b_mask is None:
        b_mask = np.ones((n_batch, n), dtype=bool)
    a_mask = np.asarray(a_mask, dtype=bool)
    b_mask = np.asarray(b_mask, dtype=bool)
    if not a_mask.any(axis=1).all() or not b_mask.any(axis=1).all():
        raise ValueError("attend: every item needs at least one valid position per side")

    e = a_bar @ T.transpose(b_bar, (0, 2, 1))  # [B, m, n]
    w_a = T.softmax(T.mask_fill(e, ~b_mask[:, None, :], NEG_INF), axis=2)
    w_b = T.softmax(T.mask_fill(e, ~a_mask[:, :, None], NEG_INF), axis=1)
    a_tilde = w_a @ b_bar
    b_tilde = T.transpose(w_b, (0, 2, 1)) @ a_bar

    if unbatched:
        a_tilde, b_tilde, e, w_a, w_b = a_tilde[0], b_tilde[0], e[0], w_a[0], w_b[0]
    if return_weights:
        return a_tilde, b_tilde, e, w_a, w_b
    return a_tilde, b_tilde, e


def enrich(x_bar: Tensor, x_tilde: Tensor) -> Tensor:
    """Interaction features [x; x~; x - x~; x * x~] along the last axis."""
    if x_bar.shape != x_tilde.shape:
        raise T.ShapeError(f"enrich: shapes differ, {x_bar.shape} vs {x_tilde.shape}")
    axis = x_bar.ndim - 1
    return T.concat([x_bar, x_tilde, x_bar - x_tilde, x_bar * x_tilde], axis=axis)


def _masked_max(x: Tensor, lengths: np.ndarray) -> Tensor:
    padded = ~length_mask(lengths, x.shape[1])
    filled = T.mask_fill(x, padded[:, :, None], NEG_INF)
    values, _ = T.max_reduce(filled, axis=1)
    return values


def _aggregate(m_a: Tensor, m_b: Tensor, a_len: np.ndarray, b_len: np.ndarray, params: EsimParams):
    v_a, last_a = bilstm(m_a, a_len, params.agg_lstm)
    v_b, last_b = bilstm(m_b, b_len, params.agg_lstm)
    pooled = T.concat([_masked_max(v_a, a_len), _masked_max(v_b, b_len), last_a, last_b], axis=1)
    return pooled, v_a, v_b


def aggregate_and_pool(m_a: Tensor, m_b: Tensor, params: EsimParams, a_lengths=None, b_lengths=None) -> Tensor:
    """Aggregation BiLSTM over both enriched sequences, then
    [max-pool(a); max-pool(b); final(a); final(b)] -> width 8 * ctx_hidden."""
    unbatched = m_a.ndim == 2
    if unbatched:
        m_a = T.reshape(m_a, (1,) + m_a.shape)
        m_b = T.reshape(m_b, (1,) + m_b.shape)
    a_len = np.asarray(a_lengths, dtype=np.int64) if a_lengths is not None else np.full(m_a.shape[0], m_a.shape[1])
    b_len = np.asarray(b_lengths, dtype=np.int64) if b_lengths is not None else np.full(m_b.shape[0], m_b.shape[1])
    pooled, _, _ = _aggregate(m_a, m_b, a_len, b_len, params)
    return pooled[0] if unbatched else pooled


def _mlp_logits(v: Tensor, params: EsimParams) -> Tensor:
    hidden = T.relu(v @ params.mlp_w1 + params.mlp_b1)
    return hidden @ params.mlp_w2 + params.mlp_b2


def predict(v: Tensor, params: EsimParams) -> Tensor:
    """Sigmoid match probability from a pooled vector ([8h] or [batch, 8h])."""
    unbatched = v.ndim == 1
    if unbatched:
        v = T.reshape(v, (1,) + v.shape)
    probs = T.sigmoid(T.reshape(_mlp_logits(v, params), (v.shape[0],)))
    return probs[0] if unbatched else probs


def bce_loss(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy, computed in logit space for stability."""
    per_item = T.sigmoid_cross_entropy(logits, labels)
    return T.sum_reduce(per_item) * (1.0 / per_item.shape[0])


def forward(params: EsimParams, batch: Batch, return_states: bool = False):
    """Logits for every (context, response) pair in the batch."""
    a_rep = _word_representation(batch.ctx_ids, batch.ctx_chars, batch.ctx_char_len, params)
    b_rep = _word_representation(batch.rsp_ids, batch.rsp_chars, batch.rsp_char_len, params)
    a_bar, _ = bilstm(a_rep, batch.ctx_len, params.ctx_lstm)
    b_bar, _ = bilstm(b_rep, batch.rsp_len, params.ctx_lstm)
    a_mask = length_mask(batch.ctx_len, a_bar.shape[1])
    b_mask = length_mask(batch.rsp_len, b_bar.shape[1])
    a_tilde, b_tilde, _ = attend(a_bar, b_bar, a_mask, b_mask)
    m_a = enrich(a_bar, a_tilde)
    m_b = enrich(b_bar, b_tilde)
    pooled, v_a, v_b = _aggregate(m_a, m_b, batch.ctx_len, batch.rsp_len, params)
    logits = T.reshape(_mlp_logits(pooled, params), (batch.size,))
    if return_states:
        return logits, {"v_a": v_a, "v_b": v_b}
    return logits


@dataclass
class ScoredPair:
    score: float
    example: DialogueExample


def score_probs(params: EsimParams, group: RankingGroup, vocab: Vocabulary, config: EsimConfig) -> np.ndarray:
    """Sigmoid probability per candidate, in candidate order."""
    examples = [DialogueExample(group.context, c.response, c.label) for c in group.candidates]
    batch = make_batch(examples, vocab, config)
    logits = forward(params, batch)
    return T.sigmoid(logits).data.copy()


def score(params: EsimParams, group: RankingGroup, vocab: Vocabulary, config: EsimConfig) -> list[ScoredPair]:
    probs = score_probs(params, group, vocab, config)
    examples = [DialogueExample(group.context, c.response, c.label) for c in group.candidates]
    return [ScoredPair(float(p), ex) for p, ex in zip(probs, examples)]


def ensemble_score(
    params_list: Sequence[EsimParams], group: RankingGroup, vocab: Vocabulary, config: EsimConfig
) -> list[ScoredPair]:
    """Average the member probabilities (candidate order preserved)."""
    if not params_list:
        raise ValueError("ensemble needs at least one model")
    probs = np.mean([score_probs(p, group, vocab, config) for p in params_list], axis=0)
    examples = [DialogueExample(group.context, c.response, c.label) for c in group.candidates]
    return [ScoredPair(float(p), ex) for p, ex in zip(probs, examples)]


@dataclass
class SignalReport:
    context: list[tuple[str, float]]  # descending strength, ties in token order
    response: list[tuple[str, float]]


def token_signal_strength(
    params: EsimParams, example: DialogueExample, vocab: Vocabulary, config: EsimConfig
) -> SignalReport:
    """Rank tokens by the max component of their aggregation-layer vector.

    The per-token maxima are what max pooling selects from, so a token with
    a large value is one the pooled representation actually used.
    """
    batch = make_batch([example], vocab, config)
    _, states = forward(params, batch, return_states=True)

    def ranked(hidden: Tensor, n: int, tokens: tuple[str, ...]) -> list[tuple[str, float]]:
        strengths = hidden.data[0, :n].max(axis=1)
        order = sorted(range(n), key=lambda i: (-strengths[i], i))
        return [(tokens[i], float(strengths[i])) for i in order]

    return SignalReport(
        context=ranked(states["v_a"], int(batch.ctx_len[0]), batch.ctx_tokens[0]),
        response=ranked(states["v_b"], int(batch.rsp_len[0]), batch.rsp_tokens[0]),
    )


def save_checkpoint(path, params: EsimParams, config: EsimConfig, vocab: Vocabulary) -> None:
    """Tensor archive plus a manifest carrying the config, the character
    alphabet and the vocabulary, so a checkpoint is self-contained."""
    meta = {
        "kind": "esim-checkpoint",
        "config": asdict(config),
        "alphabet": ALPHABET,
        "vocab": [f"{t}\t{c}" for t, c in vocab.items()],
    }
    checkpoint.save_tensors(path, {k: t.data for k, t in params.named_tensors().items()}, meta)


def load_checkpoint(path) -> tuple[EsimParams, EsimConfig, Vocabulary]:
    arrays, meta = checkpoint.load_tensors(path)
    if meta.get("kind") != "esim-checkpoint":
        raise CheckpointError(f"{path}: not an esim checkpoint")
    if meta.get("alphabet") != ALPHABET:
        raise CheckpointError(f"{path}: checkpoint was written with a different character alphabet")
    config = EsimConfig(**meta["config"])
    vocab_items = []
    for line in meta.get("vocab", []):
        token, count = line.split("\t")
        vocab_items.append((token, int(count)))
    vocab = Vocabulary(vocab_items)

    def take(name: str, requires_grad: bool) -> Tensor:
        if name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        return Tensor(arrays[name], requires_grad=requires_grad)

    def take_bilstm(prefix: str) -> BiLstmParams:
        from .recurrent import LstmParams

        return BiLstmParams(
            fwd=LstmParams(take(f"{prefix}_fwd_wx", True), take(f"{prefix}_fwd_wh", True), take(f"{prefix}_fwd_b", True)),
            bwd=LstmParams(take(f"{prefix}_bwd_wx", True), take(f"{prefix}_bwd_wh", True), take(f"{prefix}_bwd_b", True)),
        )

    word_embedding = take("word_embedding", config.trainable_word_embeddings)
    if word_embedding.shape != (len(vocab), config.word_dim):
        raise CheckpointError(
            f"{path}: embedding shape {word_embedding.shape} does not match vocab/config "
            f"({len(vocab)}, {config.word_dim})"
        )
    params = EsimParams(
        word_embedding=word_embedding,
        char_onehot=Tensor(np.eye(config.char_alphabet_size)),
        char_lstm=take_bilstm("char"),
        ctx_lstm=take_bilstm("ctx"),
        agg_lstm=take_bilstm("agg"),
        mlp_w1=take("mlp_w1", True),
        mlp_b1=take("mlp_b1", True),
        mlp_w2=take("mlp_w2", True),
        mlp_b2=take("mlp_b2", True),
    )
    return params, config, vocab
