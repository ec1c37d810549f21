"""LSTM cell and masked bidirectional LSTM built on the tensor ops.

Variable-length batches use explicit per-item lengths: padded time steps
keep the carried state and emit zero output vectors, so padding never
leaks into valid positions or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LstmParams:
    """One direction's weights. Gate order along the last axis: i, f, g, o."""

    w_x: Tensor  # [n_in, 4*n_hidden]
    w_h: Tensor  # [n_hidden, 4*n_hidden]
    b: Tensor  # [4*n_hidden]

    @property
    def n_hidden(self) -> int:
        return self.w_h.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_x.shape[0]


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams

    @property
    def n_hidden(self) -> int:
        return self.fwd.n_hidden

    @property
    def n_in(self) -> int:
        return self.fwd.n_in


def init_lstm(rng: np.random.Generator, n_in: int, n_hidden: int, forget_bias: float = 1.0) -> LstmParams:
    """Glorot-uniform weights, zero biases except the forget gate."""
    w_x = T.glorot_uniform(rng, n_in, 4 * n_hidden, shape=(n_in, 4 * n_hidden))
    w_h = T.glorot_uniform(rng, n_hidden, 4 * n_hidden, shape=(n_hidden, 4 * n_hidden))
    b = np.zeros(4 * n_hidden)
    b[n_hidden : 2 * n_hidden] = forget_bias
    return LstmParams(w_x, w_h, Tensor(b, requires_grad=True))


def init_bilstm(rng: np.random.Generator, n_in: int, n_hidden: int) -> BiLstmParams:
    return BiLstmParams(init_lstm(rng, n_in, n_hidden), init_lstm(rng, n_in, n_hidden))


def _gates_to_state(gates: Tensor, c_prev: Tensor, n_hidden: int):
    i = T.sigmoid(gates[:, :n_hidden])
    f = T.sigmoid(gates[:, n_hidden : 2 * n_hidden])
    g = T.tanh(gates[:, 2 * n_hidden : 3 * n_hidden])
    o = T.sigmoid(gates[:, 3 * n_hidden :])
    c = f * c_prev + i * g
    h = o * T.tanh(c)
    return h, c


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One LSTM step: returns (h, c) for a [batch, n_in] input."""
    if x.ndim != 2 or h_prev.shape != c_prev.shape:
        raise T.ShapeError(f"lstm_cell: bad shapes x={x.shape} h={h_prev.shape} c={c_prev.shape}")
    gates = x @ params.w_x + h_prev @ params.w_h + params.b
    return _gates_to_state(gates, c_prev, params.n_hidden)


def _run_direction(seq: Tensor, lengths: np.ndarray, params: LstmParams, reverse: bool):
    batch, max_len, _ = seq.shape
    n_hidden = params.n_hidden
    dtype = seq.dtype

    # Project all inputs through w_x in one matmul; the step loop then only
    # touches the [batch, 4H] recurrent part.
    proj = T.reshape(T.reshape(seq, (batch * max_len, params.n_in)) @ params.w_x, (batch, max_len, 4 * n_hidden))

    h = T.zeros((batch, n_hidden))
    c = T.zeros((batch, n_hidden))
    outputs: list[Tensor | None] = [None] * max_len
    steps = range(max_len - 1, -1, -1) if reverse else range(max_len)
    for t in steps:
        valid = (t < lengths).astype(dtype)[:, None]
        keep = Tensor(1.0 - valid)
        valid = Tensor(valid)
        gates = proj[:, t, :] + h @ params.w_h + params.b
        h_new, c_new = _gates_to_state(gates, c, n_hidden)
        h = h_new * valid + h * keep
        c = c_new * valid + c * keep
        outputs[t] = T.reshape(h_new * valid, (batch, 1, n_hidden))
    hidden = T.concat(outputs, axis=1)
    return hidden, h


def bilstm(seq: Tensor, lengths, params: BiLstmParams):
    """Run both directions over a padded [batch, len, n_in] sequence.

    Returns (hidden_states, last_states): hidden_states is
    [batch, len, 2*n_hidden] with zeros at padded positions; last_states is
    [batch, 2*n_hidden], the forward state after the last valid step
    concatenated with the backward state after reading back to position 0.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if seq.ndim != 3:
        raise T.ShapeError(f"bilstm expects [batch, len, n_in], got {seq.shape}")
    if lengths.shape != (seq.shape[0],):
        raise T.ShapeError(f"lengths shape {lengths.shape} does not match batch {seq.shape[0]}")
    if np.any(lengths < 1):
        raise ValueError("bilstm: every item needs length >= 1")
    if np.any(lengths > seq.shape[1]):
        raise ValueError(f"bilstm: length exceeds padded extent {seq.shape[1]}")

    hidden_f, last_f = _run_direction(seq, lengths, params.fwd, reverse=False)
    hidden_b, last_b = _run_direction(seq, lengths, params.bwd, reverse=True)
    hidden = T.concat([hidden_f, hidden_b], axis=2)
    last = T.concat([last_f, last_b], axis=1)
    return hidden, last
