"""Self-attention global encoder over the fused audiovisual sequence.

For query step t, logits l_i = <W_key x_i, W_query x_t> are softmax-normalised
over i and the context V_t is the weighted sum of the untransformed inputs.
There is no logit scaling and no positional encoding by default; temporal
order is carried by the recurrent layers.

All reductions over the sequence axis run in a canonical order: addends are
sorted by value and accumulated with Kahan compensation.  This makes the
encoder exactly order-free: shuffling the input sequence and unshuffling the
outputs reproduces the original results bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import EmptySequenceError, ShapeError

__all__ = ["AttentionParams", "attend", "attend_all", "canonical_sum"]


class AttentionParams:
    """Square key/query maps on the fused-vector dimension."""

    def __init__(self, w_key, w_query, scale_logits=False):
        d = w_key.value.shape[0]
        if w_key.value.shape != (d, d) or w_query.value.shape != (d, d):
            raise ShapeError(
                f"attention maps must be square and equal: key {w_key.value.shape}, "
                f"query {w_query.value.shape}")
        self.w_key = w_key
        self.w_query = w_query
        self.scale_logits = bool(scale_logits)

    @property
    def dim(self):
        return self.w_key.value.shape[0]

    @classmethod
    def init(cls, dim, rng, scale_logits=False):
        bound = 1.0 / np.sqrt(dim)
        return cls(
            ad.parameter(rng.uniform(-bound, bound, size=(dim, dim))),
            ad.parameter(rng.uniform(-bound, bound, size=(dim, dim))),
            scale_logits=scale_logits,
        )

    def named_parameters(self, prefix=""):
        yield f"{prefix}w_key", self.w_key
        yield f"{prefix}w_query", self.w_query


def _kahan_last_axis(sorted_arr: np.ndarray) -> np.ndarray:
    """Compensated sum along the last axis, accumulating in the given order."""
    total = np.zeros(sorted_arr.shape[:-1])
    comp = np.zeros_like(total)
    for i in range(sorted_arr.shape[-1]):
        y = sorted_arr[..., i] - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def canonical_sum(arr: np.ndarray, axis: int = -1) -> np.ndarray:
    """Order-free sum: sort addends along ``axis``, then Kahan-accumulate.

    The result depends only on the multiset of addends, so reductions over a
    permuted sequence reproduce the unpermuted result exactly.
    """
    arr = np.asarray(arr, dtype=np.float64)
    moved = np.moveaxis(arr, axis, -1)
    return _kahan_last_axis(np.sort(moved, axis=-1))


def _project_columns(w: np.ndarray, x_cols: np.ndarray) -> np.ndarray:
    """Apply ``w`` to every column independently.

    Each column result is then bitwise independent of sequence order."""
    out = np.empty((w.shape[0], x_cols.shape[1]))
    for i in range(x_cols.shape[1]):
        out[:, i] = w @ x_cols[:, i]
    return out


def _logit_row(keys: np.ndarray, query_col: np.ndarray) -> np.ndarray:
    # addend order over the feature axis is fixed, so each logit is stable
    return np.sum(keys * query_col[:, None], axis=0)


def _softmax_row(logits: np.ndarray):
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / canonical_sum(e)


def _context_row(weights_row: np.ndarray, x_cols: np.ndarray) -> np.ndarray:
    return canonical_sum(x_cols * weights_row[None, :], axis=1)


def _check_inputs(params, x_cols):
    if x_cols.shape[0] != params.dim:
        raise ShapeError(
            f"attention built for dim {params.dim}, sequence vectors have dim {x_cols.shape[0]}")


def attend(params: AttentionParams, xs, t: int):
    """Context for the single query step ``t`` (0-based).

    Returns (context (d, 1) array, weights (n,) array).  This is the direct
    per-query computation; ``attend_all`` must agree with it row by row.
    """
    x_cols = _stack_values(xs)
    n = x_cols.shape[1]
    if not 0 <= t < n:
        raise IndexError(f"query index {t} out of range for sequence of length {n}")
    _check_inputs(params, x_cols)
    keys = _project_columns(params.w_key.value, x_cols)
    query = params.w_query.value @ x_cols[:, t]
    logits = _logit_row(keys, query)
    if params.scale_logits:
        logits = logits / np.sqrt(params.dim)
    alpha = _softmax_row(logits)
    context = _context_row(alpha, x_cols)
    return context.reshape(-1, 1), alpha


def _stack_values(xs) -> np.ndarray:
    if isinstance(xs, np.ndarray):
        cols = np.asarray(xs, dtype=np.float64)
        if cols.ndim != 2:
            raise ShapeError(f"expected (d, n) array of column vectors, got {cols.shape}")
    else:
        xs = list(xs)
        if not xs:
            raise EmptySequenceError("attention over an empty sequence")
        cols = np.concatenate(
            [ad.as_tensor(x).value.reshape(-1, 1) for x in xs], axis=1)
    if cols.shape[1] == 0:
        raise EmptySequenceError("attention over an empty sequence")
    return cols


def attend_all(params: AttentionParams, xs):
    """Contexts for every step; returns (list of (d, 1) tensors, alpha (n, n)).

    ``xs`` is a sequence of (d, 1) tensors (gradients flow back into them and
    into the key/query maps).  Row t of alpha holds the weights of query t.
    """
    xs = [ad.as_tensor(x) for x in xs]
    if not xs:
        raise EmptySequenceError("attend_all: empty input sequence")
    x_node = ad.concat_cols(xs)
    context_node, alpha = _attention_op(params, x_node)
    contexts = [ad.col(context_node, t) for t in range(len(xs))]
    return contexts, alpha


def _attention_op(params: AttentionParams, x_node):
    """Composite tape op: (d, n) sequence -> (d, n) context matrix."""
    x_cols = x_node.value
    _check_inputs(params, x_cols)
    d, n = x_cols.shape
    keys = _project_columns(params.w_key.value, x_cols)
    queries = _project_columns(params.w_query.value, x_cols)
    logits = np.empty((n, n))
    for t in range(n):
        logits[t, :] = _logit_row(keys, queries[:, t])
    if params.scale_logits:
        logits = logits / np.sqrt(d)
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exp_l = np.exp(shifted)
    denom = canonical_sum(exp_l, axis=1)
    alpha = exp_l / denom[:, None]
    contexts = np.empty((d, n))
    for t in range(n):
        contexts[:, t] = _context_row(alpha[t, :], x_cols)

    w_key, w_query = params.w_key, params.w_query
    scale = 1.0 / np.sqrt(d) if params.scale_logits else 1.0

    def backward_fn(out):
        g = out.grad  # (d, n)
        d_alpha = g.T @ x_cols  # (n, n)
        d_x = g @ alpha  # from V = X alpha^T
        row_dot = np.sum(d_alpha * alpha, axis=1, keepdims=True)
        d_logits = alpha * (d_alpha - row_dot) * scale
        d_keys = queries @ d_logits  # (d, n)
        d_queries = keys @ d_logits.T
        if w_key.requires_grad:
            w_key.grad += d_keys @ x_cols.T
        if w_query.requires_grad:
            w_query.grad += d_queries @ x_cols.T
        if x_node.requires_grad:
            x_node.grad += d_x + w_key.value.T @ d_keys + w_query.value.T @ d_queries

    out = ad._make(contexts, "attention", (x_node, w_key, w_query), backward_fn)
    return out, alpha
