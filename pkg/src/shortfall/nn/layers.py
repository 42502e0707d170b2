"""Differentiable layers: dense, embedding, GRU, bidirectional unroll, attention.

Layers accept either a single sample (vector / L x n sequence) or a batch
with a leading batch axis; the two paths share the same parameters and
primitives, so gradients are identical either way.
"""

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor, astensor

__all__ = [
    "dense", "embedding_lookup", "gru_cell", "bidirectional_gru",
    "additive_attention", "attention_scores",
]


def dense(x, W, b):
    """W (out, in) applied to x (in,) or a batch (B, in), plus bias b (out,)."""
    x, W, b = astensor(x), astensor(W), astensor(b)
    if x.ndim == 1:
        return T.add(T.matmul(W, x), b)
    if x.ndim == 2:
        return T.add_bias(T.matmul(x, T.transpose(W)), b)
    raise ShapeError(f"dense input must be rank 1 or 2, got {x.data.shape}")


def embedding_lookup(table, ids):
    return T.embedding(table, ids)


def _gate(x, h_prev, W, U, b):
    x_part = T.matmul(W, x) if x.ndim == 1 else T.matmul(x, T.transpose(W))
    h_part = T.matmul(U, h_prev) if h_prev.ndim == 1 else T.matmul(h_prev, T.transpose(U))
    s = T.add(x_part, h_part)
    return T.add(s, b) if s.ndim == 1 else T.add_bias(s, b)


def gru_cell(x, h_prev, params):
    """One GRU step.

    Gate convention (fixed for this repo):
        z = sigma(Wz x + Uz h + bz)
        r = sigma(Wr x + Ur h + br)
        htilde = tanh(Wh x + Uh (r * h) + bh)
        h' = (1 - z) * h + z * htilde

    params is a mapping with keys Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh,
    where each W is (d, in) and each U is (d, d).
    """
    x, h_prev = astensor(x), astensor(h_prev)
    z = T.sigmoid(_gate(x, h_prev, params["Wz"], params["Uz"], params["bz"]))
    r = T.sigmoid(_gate(x, h_prev, params["Wr"], params["Ur"], params["br"]))
    rh = T.mul(r, h_prev)
    htilde = T.tanh(_gate(x, rh, params["Wh"], params["Uh"], params["bh"]))
    keep = T.add(T.mul(T.neg(z), h_prev), h_prev)        # (1 - z) * h
    return T.add(keep, T.mul(z, htilde))


def _step_input(seq, t):
    if isinstance(seq, Tensor):
        return T.select_time(seq, t)
    arr = np.asarray(seq, dtype=np.float64)
    return Tensor(arr[t] if arr.ndim == 2 else arr[:, t, :])


def _seq_len_hidden(seq, params):
    arr = seq.data if isinstance(seq, Tensor) else np.asarray(seq)
    if arr.ndim == 2:
        length, batch = arr.shape[0], None
    elif arr.ndim == 3:
        length, batch = arr.shape[1], arr.shape[0]
    else:
        raise ShapeError(f"sequence must be rank 2 or 3, got {arr.shape}")
    if length < 1:
        raise ShapeError("empty sequence")
    d = astensor(params["Uz"]).data.shape[0]
    return length, batch, d


def bigru_states(seq, params_fwd, params_bwd):
    """Forward and backward state lists for a sequence, zero initial states."""
    length, batch, d = _seq_len_hidden(seq, params_fwd)
    shape = (d,) if batch is None else (batch, d)
    h = Tensor(np.zeros(shape))
    fwd = []
    for t in range(length):
        h = gru_cell(_step_input(seq, t), h, params_fwd)
        fwd.append(h)
    h = Tensor(np.zeros(shape))
    bwd_rev = []
    for t in reversed(range(length)):
        h = gru_cell(_step_input(seq, t), h, params_bwd)
        bwd_rev.append(h)
    bwd = list(reversed(bwd_rev))
    return fwd, bwd


def bidirectional_gru(seq, params_fwd, params_bwd):
    """Concatenated forward/backward GRU states, shape (L, 2d) or (B, L, 2d)."""
    fwd, bwd = bigru_states(seq, params_fwd, params_bwd)
    steps = [T.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]
    axis = 0 if steps[0].ndim == 1 else 1
    return T.stack(steps, axis=axis)


def attention_scores(query, key_proj, keys, params):
    """Additive attention with the key projection precomputed.

    query (q,) or (B, q); key_proj = keys @ Ua^T, shape (L, a) or (B, L, a);
    keys (L, k) or (B, L, k). Returns (context, weights).
    """
    Wa, v = astensor(params["Wa"]), astensor(params["v"])
    query = astensor(query)
    if query.ndim == 1:
        q_proj = T.matmul(Wa, query)
        act = T.tanh(T.add_bias(key_proj, q_proj))
    else:
        q_proj = T.matmul(query, T.transpose(Wa))
        act = T.tanh(T.add_expand(key_proj, q_proj))
    scores = T.matmul(act, v)
    weights = T.softmax(scores)
    context = T.weighted_sum(weights, keys)
    return context, weights


def additive_attention(query, keys, params):
    """Bahdanau-style attention.

    scores_j = v . tanh(Wa query + Ua key_j); weights = softmax(scores);
    context = sum_j weights_j key_j. params: Wa (a, q), Ua (a, k), v (a,).
    """
    keys = astensor(keys)
    Ua = astensor(params["Ua"])
    if keys.ndim == 2:
        key_proj = T.matmul(keys, T.transpose(Ua))
    elif keys.ndim == 3:
        key_proj = T.matmul(keys, T.transpose(Ua))
    else:
        raise ShapeError(f"keys must be rank 2 or 3, got {keys.data.shape}")
    return attention_scores(query, key_proj, keys, params)
