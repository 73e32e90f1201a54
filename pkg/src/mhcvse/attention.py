"""Multi-head scaled dot-product self-attention with mean pooling.

One module per modality sits on top of the encoder output (region rows or
token states) and pools the attended sequence into a single instance
embedding. No positional encodings anywhere, so the whole stack is
permutation equivariant and the pooled vector is permutation invariant.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor, concat, div_scalar, matmul, mean_rows, softmax_rows, transpose,
)
from .encoders import uniform_init

__all__ = [
    "MhsaParams", "attention_scores", "attention_weights",
    "scaled_dot_attention", "multi_head", "attend_and_pool",
    "head_attention_weights",
]


class MhsaParams:
    """Per-head projections W_q, W_k, W_v of shape (d, d_k) and the output
    map W_out of shape (h * d_k, d), with d_k = d // h exactly."""

    def __init__(self, heads: list[tuple[Tensor, Tensor, Tensor]], w_out: Tensor):
        self.heads = heads
        self.w_out = w_out

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, h: int) -> "MhsaParams":
        if h < 1:
            raise ValueError(f"need at least one head, got {h}")
        if d % h != 0:
            raise ValueError(f"embed dim {d} not divisible by head count {h}")
        d_k = d // h
        heads = [tuple(uniform_init(rng, (d, d_k), d) for _ in range(3))
                 for _ in range(h)]
        return cls(heads, uniform_init(rng, (h * d_k, d), h * d_k))

    @property
    def head_count(self) -> int:
        return len(self.heads)

    @property
    def head_dim(self) -> int:
        return self.heads[0][0].shape[1]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (wq, wk, wv) in enumerate(self.heads):
            out[f"{prefix}.head{i}.w_q"] = wq
            out[f"{prefix}.head{i}.w_k"] = wk
            out[f"{prefix}.head{i}.w_v"] = wv
        out[f"{prefix}.w_out"] = self.w_out
        return out


def attention_scores(q: Tensor, k: Tensor) -> Tensor:
    """Pre-softmax scores Q K^T / sqrt(d_k)."""
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ValueError(f"bad attention operand shapes {q.shape} and {k.shape}")
    d_k = q.shape[1]
    return div_scalar(matmul(q, transpose(k)), float(np.sqrt(d_k)))


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic attention matrix softmax(Q K^T / sqrt(d_k))."""
    return softmax_rows(attention_scores(q, k))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V for (n, d_k) operands."""
    if v.ndim != 2 or v.shape[0] != k.shape[0]:
        raise ValueError(f"value rows {v.shape} do not match keys {k.shape}")
    return matmul(attention_weights(q, k), v)


def multi_head(x: Tensor, params: MhsaParams) -> Tensor:
    """Self-attention over the rows of x: (n, d) -> (n, d).

    Each head projects x to (n, d_k) queries/keys/values, attends, and the
    concatenated head outputs go through W_out.
    """
    if x.ndim != 2:
        raise ValueError(f"multi_head needs a rank-2 input, got rank {x.ndim}")
    if x.shape[1] != params.heads[0][0].shape[0]:
        raise ValueError(f"input width {x.shape[1]} != projection input "
                         f"{params.heads[0][0].shape[0]}")
    outs = [scaled_dot_attention(matmul(x, wq), matmul(x, wk), matmul(x, wv))
            for wq, wk, wv in params.heads]
    return matmul(concat(outs), params.w_out)


def attend_and_pool(x: Tensor, params: MhsaParams) -> Tensor:
    """Instance embedding: mean over the n rows of multi_head(x)."""
    return mean_rows(multi_head(x, params))


def head_attention_weights(x: Tensor, params: MhsaParams) -> list[np.ndarray]:
    """Per-head attention matrices for inspection, via the same code path."""
    out = []
    for wq, wk, wv in params.heads:
        out.append(attention_weights(matmul(x, wq), matmul(x, wk)).data)
    return out
