"""Modality encoders: linear projection of region features and a Bi-GRU.

Both encoders emit sequences in the shared embedding width d. The image
side projects each precomputed region-feature row; the text side runs a
bidirectional GRU over learned word embeddings, concatenating the two
directions (each of width d/2) per token. Word embeddings are trained from
scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, add, add_rowvec, concat, matmul, mean_rows, mul, row,
    sigmoid, stack_rows, tanh,
)

__all__ = [
    "RegionFeatures", "Caption", "GruGates", "EncoderParams",
    "encode_image", "gru_step", "encode_text", "uniform_init",
]


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int) -> Tensor:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


@dataclass
class RegionFeatures:
    """Precomputed region features for one image, shape (M, F), M >= 1."""

    regions: np.ndarray

    def __post_init__(self):
        self.regions = np.asarray(self.regions, dtype=np.float64)
        if self.regions.ndim != 2 or self.regions.shape[0] < 1:
            raise ValueError(f"regions must be (M>=1, F), got {self.regions.shape}")


@dataclass
class Caption:
    """One tokenized caption as vocabulary ids, length >= 1."""

    token_ids: list[int]

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise ValueError("caption must contain at least one token")

    def __len__(self) -> int:
        return len(self.token_ids)


class GruGates:
    """Gate weights for one GRU direction (update z, reset r, candidate h)."""

    def __init__(self, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h):
        self.w_z, self.u_z, self.b_z = w_z, u_z, b_z
        self.w_r, self.u_r, self.b_r = w_r, u_r, b_r
        self.w_h, self.u_h, self.b_h = w_h, u_h, b_h

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_hidden: int) -> "GruGates":
        def gate():
            return (uniform_init(rng, (d_in, d_hidden), d_in),
                    uniform_init(rng, (d_hidden, d_hidden), d_hidden),
                    Tensor(np.zeros(d_hidden)))
        w_z, u_z, b_z = gate()
        w_r, u_r, b_r = gate()
        w_h, u_h, b_h = gate()
        return cls(w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_z": self.w_z, f"{prefix}.u_z": self.u_z, f"{prefix}.b_z": self.b_z,
            f"{prefix}.w_r": self.w_r, f"{prefix}.u_r": self.u_r, f"{prefix}.b_r": self.b_r,
            f"{prefix}.w_h": self.w_h, f"{prefix}.u_h": self.u_h, f"{prefix}.b_h": self.b_h,
        }


class EncoderParams:
    """All encoder weights: word embeddings, both GRU directions, image projection."""

    def __init__(self, word_embedding: Tensor, gru_forward: GruGates,
                 gru_backward: GruGates, image_proj: Tensor, image_bias: Tensor):
        self.word_embedding = word_embedding
        self.gru_forward = gru_forward
        self.gru_backward = gru_backward
        self.image_proj = image_proj
        self.image_bias = image_bias

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, feature_dim: int,
             embed_dim: int) -> "EncoderParams":
        if embed_dim % 2 != 0:
            raise ValueError(f"embed_dim must be even for a Bi-GRU, got {embed_dim}")
        d_hidden = embed_dim // 2
        return cls(
            word_embedding=uniform_init(rng, (vocab_size, embed_dim), embed_dim),
            gru_forward=GruGates.init(rng, embed_dim, d_hidden),
            gru_backward=GruGates.init(rng, embed_dim, d_hidden),
            image_proj=uniform_init(rng, (feature_dim, embed_dim), feature_dim),
            image_bias=Tensor(np.zeros(embed_dim)),
        )

    def named_parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {f"{prefix}.word_embedding": self.word_embedding}
        out.update(self.gru_forward.named_parameters(f"{prefix}.gru_forward"))
        out.update(self.gru_backward.named_parameters(f"{prefix}.gru_backward"))
        out[f"{prefix}.image_proj"] = self.image_proj
        out[f"{prefix}.image_bias"] = self.image_bias
        return out


def encode_image(features: RegionFeatures, params: EncoderParams) -> Tensor:
    """Project region features into the embedding space: (M, F) -> (M, d)."""
    if features.regions.shape[1] != params.image_proj.shape[0]:
        raise ValueError(
            f"feature width {features.regions.shape[1]} != projection input "
            f"{params.image_proj.shape[0]}")
    projected = matmul(Tensor(features.regions), params.image_proj)
    return add_rowvec(projected, params.image_bias)


def gru_step(x_t: Tensor, h_prev: Tensor, gates: GruGates) -> Tensor:
    """One GRU step: h_t = (1 - z_t) * h_prev + z_t * h_cand."""
    z = sigmoid(add(add(matmul(x_t, gates.w_z), matmul(h_prev, gates.u_z)), gates.b_z))
    r = sigmoid(add(add(matmul(x_t, gates.w_r), matmul(h_prev, gates.u_r)), gates.b_r))
    cand = tanh(add(add(matmul(x_t, gates.w_h),
                        matmul(mul(r, h_prev), gates.u_h)), gates.b_h))
    return add(mul(1.0 - z, h_prev), mul(z, cand))


def _run_direction(embedded: list[Tensor], gates: GruGates, d_hidden: int) -> list[Tensor]:
    h = Tensor(np.zeros(d_hidden))
    states = []
    for x_t in embedded:
        h = gru_step(x_t, h, gates)
        states.append(h)
    return states


def encode_text(caption: Caption, params: EncoderParams) -> tuple[Tensor, Tensor]:
    """Bi-GRU over the caption tokens.

    Returns the per-token states (L, d) and their mean over L as the pooled
    sentence vector (d,). Each token state is the concatenation of the
    forward state at t and the backward state at t.
    """
    vocab_size = params.word_embedding.shape[0]
    for tid in caption.token_ids:
        if not 0 <= tid < vocab_size:
            raise ValueError(f"token id {tid} outside vocabulary of {vocab_size}")
    d_hidden = params.gru_forward.u_z.shape[0]
    embedded = [row(params.word_embedding, tid) for tid in caption.token_ids]
    fwd = _run_direction(embedded, params.gru_forward, d_hidden)
    bwd = _run_direction(embedded[::-1], params.gru_backward, d_hidden)[::-1]
    states = stack_rows([concat([f, b]) for f, b in zip(fwd, bwd)])
    return states, mean_rows(states)
