import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ml_translit.errors import ShapeError, VocabularyError
from ml_translit.tensor import (
    Parameter,
    Tensor,
    add,
    broadcast_to,
    concat,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax_masked,
    stack,
    swapaxes,
    tanh,
)
from ml_translit.vocab import EncodedSeq


@dataclass
class EmbeddingParams:
    table: Parameter  # [vocab_size, emb_dim]

    def parameters(self) -> List[Parameter]:
        return [self.table]


@dataclass
class LSTMParams:
    """LSTM weights with the four gates packed in the order (i, f, g, o)

    W: [d_in, 4 * d_h], U: [d_h, 4 * d_h], b: [4 * d_h]
    """

    W: Parameter
    U: Parameter
    b: Parameter

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.W, self.U, self.b]


@dataclass
class DenseParams:
    W: Parameter  # [d_in, d_out]
    b: Parameter  # [d_out]

    def parameters(self) -> List[Parameter]:
        return [self.W, self.b]


@dataclass
class AttentionOutput:
    context: Tensor  # [..., T_out, d]
    weights: Tensor  # [..., T_out, T_in]


def embedding_forward(params: EmbeddingParams, ids: Union[EncodedSeq, np.ndarray]) -> Tensor:
    """Look up one table row per token id; PAD positions get PAD's row"""
    if isinstance(ids, EncodedSeq):
        ids = np.asarray(ids.ids, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = params.table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise VocabularyError(f"invalid token id for an embedding table of {n_rows} rows")
    return params.table[ids]


def _zeros_state(batch: int, hidden: int) -> Tensor:
    return Tensor(np.zeros((batch, hidden)))


def _as_batch_state(state: Optional[Tensor], batch: int, hidden: int, name: str) -> Tensor:
    if state is None:
        return _zeros_state(batch, hidden)
    if state.ndim == 1:
        state = reshape(state, (1, hidden))
    if state.shape != (batch, hidden):
        raise ShapeError(f"lstm_forward: {name} has shape {state.shape}, expected {(batch, hidden)}")
    return state


def lstm_forward(
    params: LSTMParams, inputs: Tensor, h0: Optional[Tensor] = None, c0: Optional[Tensor] = None
) -> Tuple[Tensor, Tensor, Tensor]:
    """Run the LSTM recurrence over the time axis

    i = σ(xW_i + hU_i + b_i), f = σ(·), g = tanh(·), o = σ(·); c ← f⊙c + i⊙g; h ← o⊙tanh(c)

    Args:
        params (LSTMParams): cell weights
        inputs (Tensor): [T, d_in] or [B, T, d_in]
        h0 (Optional[Tensor]): initial hidden state [d_h] / [B, d_h], zeros when omitted
        c0 (Optional[Tensor]): initial cell state, same shape as h0

    Raises:
        ShapeError: inputs or states disagree with the weights

    Returns:
        Tuple[Tensor, Tensor, Tensor]: outputs [.., T, d_h], h_T, c_T (unbatched inputs give unbatched results)
    """
    batched = inputs.ndim == 3
    if inputs.ndim not in (2, 3):
        raise ShapeError(f"lstm_forward: inputs must be [T, d] or [B, T, d], got {inputs.shape}")
    x = inputs if batched else reshape(inputs, (1,) + inputs.shape)
    batch, steps, d_in = x.shape
    hidden = params.hidden_size
    if d_in != params.input_size:
        raise ShapeError(f"lstm_forward: inputs {inputs.shape} do not match W {params.W.shape}")
    if params.U.shape != (hidden, 4 * hidden) or params.b.shape != (4 * hidden,):
        raise ShapeError(f"lstm_forward: inconsistent weights W {params.W.shape} U {params.U.shape} b {params.b.shape}")

    h = _as_batch_state(h0, batch, hidden, "h0")
    c = _as_batch_state(c0, batch, hidden, "c0")

    # input projections for every step at once
    xw = add(matmul(x, params.W), params.b)
    outputs = []
    for t in range(steps):
        z = add(xw[:, t, :], matmul(h, params.U))
        i = sigmoid(z[:, 0:hidden])
        f = sigmoid(z[:, hidden : 2 * hidden])
        g = tanh(z[:, 2 * hidden : 3 * hidden])
        o = sigmoid(z[:, 3 * hidden :])
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        outputs.append(h)

    out = stack(outputs, axis=1)
    if not batched:
        return reshape(out, (steps, hidden)), reshape(h, (hidden,)), reshape(c, (hidden,))
    return out, h, c


def length_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    """[B, steps] boolean mask, True at positions < length"""
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


def bilstm_forward(
    fwd_params: LSTMParams, bwd_params: LSTMParams, inputs: Tensor, src_len: Union[int, np.ndarray]
) -> Tensor:
    """Bidirectional LSTM over post-padded sequences

    The backward direction reads positions src_len-1 .. 0 of each sequence. Output rows are
    concat(h_fwd[t], h_bwd[t]); positions at or past src_len are exactly zero.

    Args:
        fwd_params (LSTMParams): forward direction
        bwd_params (LSTMParams): backward direction
        inputs (Tensor): [T, d] or [B, T, d]
        src_len (Union[int, np.ndarray]): valid length per sequence

    Raises:
        ShapeError: src_len exceeds T or the directions differ in size
        ValueError: src_len below 1

    Returns:
        Tensor: [.., T, 2 * d_h]
    """
    if fwd_params.hidden_size != bwd_params.hidden_size:
        raise ShapeError("bilstm_forward: forward and backward hidden sizes differ")
    batched = inputs.ndim == 3
    x = inputs if batched else reshape(inputs, (1,) + inputs.shape)
    batch, steps, _ = x.shape
    lengths = np.broadcast_to(np.asarray(src_len, dtype=np.int64), (batch,))
    if lengths.max() > steps:
        raise ShapeError(f"bilstm_forward: src_len {int(lengths.max())} exceeds sequence length {steps}")
    if lengths.min() < 1:
        raise ValueError("bilstm_forward: src_len must be >= 1")

    valid = length_mask(lengths, steps)
    positions = np.arange(steps)[None, :]
    # reverses the valid prefix of each row and leaves padding in place; it is its own inverse
    reverse_index = np.where(valid, lengths[:, None] - 1 - positions, positions)
    rows = np.arange(batch)[:, None]

    fwd_out, _, _ = lstm_forward(fwd_params, x)
    bwd_reversed, _, _ = lstm_forward(bwd_params, x[rows, reverse_index])
    bwd_out = bwd_reversed[rows, reverse_index]

    out = mul(concat([fwd_out, bwd_out], axis=-1), valid[:, :, None].astype(np.float64))
    if not batched:
        return reshape(out, out.shape[1:])
    return out


def repeat_vector(v: Tensor, steps: int) -> Tensor:
    """[..., d] -> [..., steps, d] with every row equal to v"""
    if steps < 1:
        raise ValueError(f"repeat_vector: steps must be >= 1, got {steps}")
    expanded = reshape(v, v.shape[:-1] + (1, v.shape[-1]))
    return broadcast_to(expanded, v.shape[:-1] + (steps, v.shape[-1]))


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, src_mask: Optional[np.ndarray] = None) -> AttentionOutput:
    """weights = softmax_masked(QKᵀ/√d), context = weights·V

    Args:
        Q (Tensor): queries [..., T_out, d]
        K (Tensor): keys [..., T_in, d]
        V (Tensor): values [..., T_in, d_v]
        src_mask (Optional[np.ndarray]): [..., T_in] True at usable keys

    Raises:
        ShapeError: Q and K disagree on d
        ValueError: some row of src_mask has no True position
    """
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"scaled_dot_attention: Q {Q.shape} and K {K.shape} differ in width")
    mask = None
    if src_mask is not None:
        src_mask = np.asarray(src_mask, dtype=bool)
        if not src_mask.any(axis=-1).all():
            raise ValueError("scaled_dot_attention: empty source mask")
        mask = src_mask[..., None, :]

    scores = mul(matmul(Q, swapaxes(K, -1, -2)), 1.0 / math.sqrt(Q.shape[-1]))
    weights = softmax_masked(scores, mask)
    return AttentionOutput(context=matmul(weights, V), weights=weights)


def dense_forward(params: DenseParams, X: Tensor) -> Tensor:
    if X.shape[-1] != params.W.shape[0]:
        raise ShapeError(f"dense: input {X.shape} does not match W {params.W.shape}")
    return add(matmul(X, params.W), params.b)


def time_distributed_dense(params: DenseParams, X: Tensor, activation: Optional[str] = None) -> Tensor:
    """Apply the same affine map (and optional softmax) to every timestep of X [..., T, d_in]"""
    if X.ndim < 2:
        raise ShapeError(f"time_distributed_dense: expected [..., T, d_in], got {X.shape}")
    out = dense_forward(params, X)
    if activation == "softmax":
        return softmax_masked(out)
    if activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    return out
