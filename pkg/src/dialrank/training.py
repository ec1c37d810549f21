"""Adam training loop for the ranker: exponential learning-rate decay,
global-norm gradient clipping, half-epoch validation and best-checkpoint
tracking. No dropout and no weight penalty are applied.

Runs are deterministic for a fixed seed in single-worker mode: one RNG
drives initialization and epoch shuffling, and batches are visited in
shuffle order.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import metrics
from .corpus import DialogueExample, RankingGroup, Vocabulary
from .esim import (
    EsimConfig,
    EsimParams,
    bce_loss,
    forward,
    init_params,
    make_batch,
    save_checkpoint,
    score_probs,
)
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


def lr_at(config: EsimConfig, step: int) -> float:
    """initial_lr * decay_rate ** (step / decay_steps), continuous (no staircase)."""
    return config.initial_lr * config.lr_decay_rate ** (step / config.lr_decay_steps)


class Adam:
    """Standard Adam (beta1=0.9, beta2=0.999, eps=1e-8) over named tensors."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class LogEntry:
    step: int
    lr: float
    loss: float
    valid_r1: float | None = None

    def line(self) -> str:
        r1 = "" if self.valid_r1 is None else f"{self.valid_r1:.6f}"
        return f"{self.step}\t{self.lr:.8f}\t{self.loss:.6f}\t{r1}"


def evaluate_r1(params: EsimParams, groups: Sequence[RankingGroup], vocab: Vocabulary, config: EsimConfig) -> float:
    report = metrics.evaluate((g, score_probs(params, g, vocab, config).tolist()) for g in groups)
    return report.r_at_1


def train(
    train_examples: Sequence[DialogueExample],
    valid_groups: Sequence[RankingGroup],
    config: EsimConfig,
    vocab: Vocabulary,
    embedding_matrix: np.ndarray,
    checkpoint_path=None,
    log_fh=None,
) -> tuple[EsimParams, list[LogEntry]]:
    """Train and return (best-or-final params, training log).

    Validation R@1 is measured every half epoch; the best-scoring state is
    checkpointed (and returned). Without validation groups the final state
    is used. Raises TrainingDiverged on a non-finite loss.
    """
    examples = list(train_examples)
    if not examples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, embedding_matrix, rng)
    optimizer = Adam(params.trainable())

    n_batches = math.ceil(len(examples) / config.batch_size)
    eval_every = max(1, n_batches // 2)
    log: list[LogEntry] = []
    best_r1 = -1.0
    best_state: dict[str, np.ndarray] | None = None
    step = 0
    done = False

    def snapshot() -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in params.named_tensors().items()}

    for _ in range(config.epochs):
        if done:
            break
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), config.batch_size):
            chunk = [examples[i] for i in order[start : start + config.batch_size]]
            batch = make_batch(chunk, vocab, config)
            logits = forward(params, batch)
            loss = bce_loss(logits, batch.labels.astype(logits.dtype))
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingDiverged(f"non-finite loss {loss_value} at step {step} (lr={lr_at(config, step):.3e})")
            optimizer.zero_grad()
            loss.backward()
            if config.trainable_word_embeddings and params.word_embedding.grad is not None:
                params.word_embedding.grad[0, :] = 0.0  # pad row stays zero
            if config.clip_norm > 0:
                clip_global_norm(optimizer.params, config.clip_norm)
            lr = lr_at(config, step)
            optimizer.step(lr)
            step += 1

            entry = LogEntry(step=step, lr=lr, loss=loss_value)
            if valid_groups and step % eval_every == 0:
                entry.valid_r1 = evaluate_r1(params, valid_groups, vocab, config)
                if entry.valid_r1 > best_r1:
                    best_r1 = entry.valid_r1
                    best_state = snapshot()
                    if checkpoint_path is not None:
                        save_checkpoint(checkpoint_path, params, config, vocab)
            log.append(entry)
            if log_fh is not None:
                log_fh.write(entry.line() + "\n")
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break

    if best_state is not None:
        for name, tensor in params.named_tensors().items():
            tensor.data = best_state[name].astype(tensor.data.dtype)
    elif checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, config, vocab)
    return params, log
