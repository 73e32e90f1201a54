"""The four training objectives and their dynamic weighting.

Three bidirectional max-margin ranking losses (instance, consensus, fusion
levels, identical machinery on different similarity matrices) plus a KL
term aligning the text concept distribution to the image one. Each term's
contribution to the total is scaled by w * sigmoid(loss_value); the scale
is computed from the plain float value, so it is a constant to the
backward pass. ``invert_dynamic_weight`` flips the sigmoid argument for
the opposite scheme (high loss, low weight).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, add, add_scalar, diag_part, div_scalar, finite_checks_enabled,
    log, mul, mul_scalar, relu, rowmax, sub, sub_colvec, sum as tsum,
    transpose,
)

__all__ = [
    "CONTRASTIVE_MODES", "contrastive_loss", "kl_loss",
    "dynamic_weight", "total_loss", "LossTerms",
]

CONTRASTIVE_MODES = ("sum", "hardest")


def contrastive_loss(scores: Tensor, margin: float, mode: str = "hardest") -> Tensor:
    """Bidirectional hinge ranking loss on a (B, B) similarity matrix.

    Row i / column i hold the matched pair. Per query the violation is
    [margin - s(i,i) + s(i,j)]_+ over the negatives j != i; ``sum`` averages
    them, ``hardest`` keeps the worst one. Both directions are added and
    the result is averaged over the batch.
    """
    if mode not in CONTRASTIVE_MODES:
        raise ValueError(f"unknown contrastive mode '{mode}' (one of {CONTRASTIVE_MODES})")
    if margin <= 0.0:
        raise ValueError(f"margin must be positive, got {margin}")
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"scores must be square, got {scores.shape}")
    b = scores.shape[0]
    if b < 2:
        raise ValueError(f"contrastive loss needs a batch of >= 2, got {b}")

    diag = diag_part(scores)
    off_diag = Tensor(1.0 - np.eye(b))
    # image -> text: row i against its caption's column
    viol_t = mul(relu(add_scalar(sub_colvec(scores, diag), margin)), off_diag)
    # text -> image: column i against its image's row
    viol_i = mul(relu(add_scalar(sub_colvec(transpose(scores), diag), margin)), off_diag)
    if mode == "sum":
        total = add(tsum(viol_t), tsum(viol_i))
        return div_scalar(total, float(b * (b - 1)))
    total = add(tsum(rowmax(viol_t)), tsum(rowmax(viol_i)))
    return div_scalar(total, float(b))


def kl_loss(p_text: Tensor, p_image: Tensor) -> Tensor:
    """KL(p_text || p_image), averaged over the batch for rank-2 inputs.

    Inputs must be strictly positive distributions (softmax range); that is
    checked while debug checks are enabled.
    """
    if p_text.shape != p_image.shape:
        raise ValueError(f"distribution shapes differ: {p_text.shape} vs {p_image.shape}")
    if p_text.ndim not in (1, 2):
        raise ValueError("kl_loss needs rank-1 or rank-2 distributions")
    if finite_checks_enabled():
        for name, t in (("p_text", p_text), ("p_image", p_image)):
            d = t.data
            if np.any(d <= 0.0):
                raise ValueError(f"{name} is not strictly positive")
            if not np.allclose(d.sum(axis=-1), 1.0, atol=1e-6):
                raise ValueError(f"{name} rows do not sum to 1")
    per_element = mul(p_text, sub(log(p_text), log(p_image)))
    total = tsum(per_element)
    if p_text.ndim == 2:
        return div_scalar(total, float(p_text.shape[0]))
    return total


def dynamic_weight(w: float, loss_value: float, invert: bool = False) -> float:
    """Effective weight w * sigmoid(loss_value), a plain float.

    Computed outside the tape on purpose: the weight is a constant to
    backpropagation. ``invert`` uses sigmoid(-loss_value) instead.
    """
    x = -loss_value if invert else loss_value
    if x >= 0.0:
        s = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        s = e / (1.0 + e)
    return w * s


@dataclass
class LossTerms:
    """One batch's loss breakdown; tensors stay live for backward."""

    l_instance: Tensor
    l_consensus: Tensor
    l_fusion: Tensor
    l_kl: Tensor
    effective_weights: tuple[float, float, float, float]
    total: Tensor

    def values(self) -> tuple[float, float, float, float]:
        return (self.l_instance.item(), self.l_consensus.item(),
                self.l_fusion.item(), self.l_kl.item())


def total_loss(l_instance: Tensor, l_consensus: Tensor, l_fusion: Tensor,
               l_kl: Tensor, base_weights=(1.0, 1.0, 1.0, 1.0),
               invert: bool = False) -> LossTerms:
    """Dynamically weighted sum of the four scalar terms."""
    terms = (l_instance, l_consensus, l_fusion, l_kl)
    if len(base_weights) != 4:
        raise ValueError(f"need 4 base weights, got {len(base_weights)}")
    for t in terms:
        if t.ndim != 0:
            raise ValueError("loss terms must be scalars")
    lambdas = tuple(dynamic_weight(float(w), t.item(), invert)
                    for w, t in zip(base_weights, terms))
    total = mul_scalar(terms[0], lambdas[0])
    for lam, t in zip(lambdas[1:], terms[1:]):
        total = add(total, mul_scalar(t, lam))
    return LossTerms(l_instance, l_consensus, l_fusion, l_kl, lambdas, total)
