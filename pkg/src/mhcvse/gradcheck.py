"""Finite-difference gradient checking for every differentiable block.

Each block builds a scalar objective from random inputs, takes tape
gradients, and compares them against central finite differences with
h = 1e-5. Relative error uses a small absolute floor so near-zero
gradients are compared absolutely:

    err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)

The suite is what the ``grad-check`` CLI subcommand runs; every block must
stay below 1e-4.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import MhsaParams, multi_head
from .autodiff import Tape, Tensor
from .consensus import ConceptGraph, ConsensusHead, GcnParams, consensus_embed, gcn_forward
from .encoders import Caption, EncoderParams, GruGates, RegionFeatures, encode_image, encode_text, gru_step
from .fusion import FUSE_TYPES, FusionParams, fuse
from .losses import contrastive_loss, dynamic_weight, kl_loss

__all__ = ["numeric_gradients", "max_relative_error", "gradient_check",
           "run_suite", "TOLERANCE"]

TOLERANCE = 1e-4
REL_FLOOR = 1e-6


def numeric_gradients(objective, params: dict[str, Tensor],
                      h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar objective.

    ``objective()`` must recompute the value from the parameters' current
    data; entries are perturbed in place and restored.
    """
    out = {}
    for name, p in params.items():
        grad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = objective()
            flat[i] = orig - h
            minus = objective()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * h)
        out[name] = grad
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def gradient_check(build, params: dict[str, Tensor], h: float = 1e-5) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``build()`` runs the forward pass and returns the scalar loss tensor;
    it is called once under a tape and repeatedly without one.
    """
    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    numeric = numeric_gradients(lambda: build().item(), params, h)
    worst = 0.0
    for name, p in params.items():
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        worst = max(worst, max_relative_error(analytic, numeric[name]))
    return worst


def _project(t: Tensor, weights: np.ndarray) -> Tensor:
    """Fixed random projection of any output to a scalar objective."""
    return ad.sum(ad.mul(t, Tensor(weights)))


def run_suite(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of every differentiable block at small dims.

    Returns the worst relative error per block name.
    """
    rng = np.random.default_rng(seed)
    d, h_heads, f_dim, m, l, k, vocab, b = 8, 2, 6, 3, 4, 5, 20, 4
    results: dict[str, float] = {}

    # GRU step
    gates = GruGates.init(rng, d, d // 2)
    x_t = Tensor(rng.normal(size=d))
    h_prev = Tensor(rng.normal(size=d // 2))
    params = dict(gates.named_parameters("gru"), **{"x_t": x_t, "h_prev": h_prev})
    proj = rng.normal(size=d // 2)
    results["gru_step"] = gradient_check(
        lambda: _project(gru_step(x_t, h_prev, gates), proj), params)

    # image encoder
    enc = EncoderParams.init(rng, vocab, f_dim, d)
    regions = RegionFeatures(rng.normal(size=(m, f_dim)))
    proj = rng.normal(size=(m, d))
    results["encode_image"] = gradient_check(
        lambda: _project(encode_image(regions, enc), proj),
        {"image_proj": enc.image_proj, "image_bias": enc.image_bias})

    # text encoder end to end
    caption = Caption(list(rng.integers(0, vocab, size=l)))
    proj = rng.normal(size=d)
    results["encode_text"] = gradient_check(
        lambda: _project(encode_text(caption, enc)[1], proj),
        enc.named_parameters("encoder"))

    # multi-head attention
    attn = MhsaParams.init(rng, d, h_heads)
    x = Tensor(rng.normal(size=(m, d)))
    proj = rng.normal(size=(m, d))
    params = dict(attn.named_parameters("attn"), x=x)
    results["multi_head_attention"] = gradient_check(
        lambda: _project(multi_head(x, attn), proj), params)

    # each fusion mode
    for fuse_type in FUSE_TYPES:
        fp = FusionParams.init(rng, d, fuse_type)
        va = Tensor(rng.normal(size=d))
        vb = Tensor(rng.normal(size=d))
        width = 2 * d if fuse_type == "concat" else d
        proj = rng.normal(size=width)
        params = dict(fp.named_parameters("fusion"), v_image=va, v_text=vb)
        results[f"fusion_{fuse_type}"] = gradient_check(
            lambda: _project(fuse(va, vb, fp).vector, proj), params)

    # GCN, both layer forms
    for form in ("paper", "conventional"):
        graph = _random_graph(rng, k, d)
        gcn = GcnParams.init(rng, d, form)
        proj = rng.normal(size=(k, d))
        params = {"concept_embeddings": graph.concept_embeddings,
                  "w0": gcn.w0, "w1": gcn.w1}
        results[f"gcn_{form}"] = gradient_check(
            lambda: _project(gcn_forward(graph, gcn), proj), params)

    # consensus head
    graph = _random_graph(rng, k, d)
    gcn = GcnParams.init(rng, d)
    head = ConsensusHead.init(rng, d, k)
    inst = Tensor(rng.normal(size=d))
    proj = rng.normal(size=d)
    params = {"predictor": head.predictor, "instance": inst,
              "concept_embeddings": graph.concept_embeddings,
              "w0": gcn.w0, "w1": gcn.w1}
    results["consensus_embed"] = gradient_check(
        lambda: _project(consensus_embed(inst, gcn_forward(graph, gcn), head)[0],
                         proj), params)

    # the four loss terms: three ranking losses (both modes) on raw
    # embeddings, and the KL term through the softmaxes
    emb_i = Tensor(rng.normal(size=(b, d)))
    emb_t = Tensor(rng.normal(size=(b, d)))
    params = {"emb_i": emb_i, "emb_t": emb_t}

    def ranking(mode):
        s = ad.matmul(ad.l2_normalize_rows(emb_i),
                      ad.transpose(ad.l2_normalize_rows(emb_t)))
        return contrastive_loss(s, margin=0.2, mode=mode)

    results["loss_contrastive_sum"] = gradient_check(lambda: ranking("sum"), params)
    results["loss_contrastive_hardest"] = gradient_check(
        lambda: ranking("hardest"), params)

    logits_i = Tensor(rng.normal(size=(b, k)))
    logits_t = Tensor(rng.normal(size=(b, k)))
    params = {"logits_i": logits_i, "logits_t": logits_t}
    results["loss_kl"] = gradient_check(
        lambda: kl_loss(ad.softmax_rows(logits_t), ad.softmax_rows(logits_i)),
        params)

    # total loss with the dynamic weights frozen at their base-point values,
    # which is exactly what detaching them means
    emb_i2 = Tensor(rng.normal(size=(b, d)))
    emb_t2 = Tensor(rng.normal(size=(b, d)))
    params = {"emb_i": emb_i2, "emb_t": emb_t2,
              "logits_i": logits_i, "logits_t": logits_t}

    def four_terms():
        s = ad.matmul(ad.l2_normalize_rows(emb_i2),
                      ad.transpose(ad.l2_normalize_rows(emb_t2)))
        return (contrastive_loss(s, 0.2, "sum"),
                contrastive_loss(s, 0.2, "hardest"),
                contrastive_loss(s, 0.3, "sum"),
                kl_loss(ad.softmax_rows(logits_t), ad.softmax_rows(logits_i)))

    frozen = [dynamic_weight(1.0, t.item()) for t in four_terms()]

    def total():
        terms = four_terms()
        out = ad.mul_scalar(terms[0], frozen[0])
        for lam, term in zip(frozen[1:], terms[1:]):
            out = ad.add(out, ad.mul_scalar(term, lam))
        return out

    results["loss_total"] = gradient_check(total, params)
    return results


def _random_graph(rng: np.random.Generator, k: int, d: int) -> ConceptGraph:
    adj = rng.uniform(0.1, 1.0, size=(k, k))
    adj /= adj.sum(axis=1, keepdims=True)
    from .encoders import uniform_init
    return ConceptGraph([f"c{i}" for i in range(k)], [1] * k, adj,
                        uniform_init(rng, (k, d), d))
