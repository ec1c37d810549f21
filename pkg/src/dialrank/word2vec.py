"""Skip-gram word2vec with negative sampling, trained on the task corpus.

Single-worker training is bit-reproducible for a fixed seed: one RNG drives
subsampling, window shrinking and negative draws in a fixed order, and all
updates are applied with deterministic numpy scatter-adds. Negatives are
drawn from the unigram distribution raised to 3/4; the learning rate decays
linearly with corpus progress down to initial_lr / 1e4.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingTable

MIN_LR_FACTOR = 1e-4


@dataclass
class Word2vecConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 5
    initial_lr: float = 0.025
    subsample: float = 1e-3  # 0 disables frequent-word subsampling
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.window < 1 or self.negatives < 1 or self.epochs < 1 or self.min_count < 1:
            raise ValueError("window, negatives, epochs and min_count must all be >= 1")
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.subsample < 0:
            raise ValueError(f"subsample must be >= 0, got {self.subsample}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def train_word2vec(sentences: Iterable[Sequence[str]], config: Word2vecConfig) -> EmbeddingTable:
    """Train input vectors for every token with frequency >= min_count."""
    sents = [list(s) for s in sentences if s]
    if not sents:
        raise ValueError("empty sentence stream")

    counts: Counter[str] = Counter()
    for s in sents:
        counts.update(s)
    kept = [(t, c) for t, c in counts.items() if c >= config.min_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise ValueError(f"no token reaches min_count={config.min_count}")
    index = {t: i for i, (t, _) in enumerate(kept)}
    freqs = np.array([c for _, c in kept], dtype=np.float64)
    n_vocab = len(kept)
    dim = config.dim

    noise = freqs**0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    if config.subsample > 0:
        frac = freqs / freqs.sum()
        ratio = config.subsample / frac
        keep_prob = np.minimum(1.0, np.sqrt(ratio) + ratio)
    else:
        keep_prob = np.ones(n_vocab)

    rng = np.random.default_rng(config.seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_vocab, dim)).astype(np.float32)
    w_out = np.zeros((n_vocab, dim), dtype=np.float32)

    total_words = sum(len(s) for s in sents) * config.epochs
    min_lr = config.initial_lr * MIN_LR_FACTOR
    processed = 0
    for _ in range(config.epochs):
        for sent in sents:
            lr = max(min_lr, config.initial_lr * (1.0 - processed / total_words))
            processed += len(sent)
            ids = [index[t] for t in sent if t in index]
            if config.subsample > 0 and ids:
                draws = rng.random(len(ids))
                ids = [i for i, r in zip(ids, draws) if r < keep_prob[i]]
            if len(ids) < 2:
                continue

            centers: list[int] = []
            contexts: list[int] = []
            for pos, center in enumerate(ids):
                span = int(rng.integers(1, config.window + 1))
                for j in range(max(0, pos - span), min(len(ids), pos + span + 1)):
                    if j != pos:
                        centers.append(center)
                        contexts.append(ids[j])
            if not centers:
                continue
            cen = np.asarray(centers, dtype=np.int64)
            ctx = np.asarray(contexts, dtype=np.int64)
            negs = np.searchsorted(noise_cdf, rng.random((len(cen), config.negatives)), side="right")

            v_in = w_in[cen]
            v_pos = w_out[ctx]
            v_neg = w_out[negs]
            g_pos = (_sigmoid(np.einsum("nd,nd->n", v_in, v_pos)) - 1.0) * lr
            g_neg = _sigmoid(np.einsum("nd,nkd->nk", v_in, v_neg)) * lr
            g_neg[negs == ctx[:, None]] = 0.0  # skip accidental hits of the true context

            d_in = g_pos[:, None] * v_pos + np.einsum("nk,nkd->nd", g_neg, v_neg)
            np.add.at(w_in, cen, -d_in.astype(np.float32))
            np.add.at(w_out, ctx, -(g_pos[:, None] * v_in).astype(np.float32))
            np.add.at(
                w_out,
                negs.reshape(-1),
                -(g_neg[:, :, None] * v_in[:, None, :]).reshape(-1, dim).astype(np.float32),
            )

    vectors = {t: w_in[i].astype(np.float64) for t, i in index.items()}
    return EmbeddingTable(dim, vectors, "trained")
