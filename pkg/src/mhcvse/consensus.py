"""Consensus-level embeddings from a concept co-occurrence graph and a GCN.

Concepts are the K most frequent non-stopword tokens of the training
corpus. The adjacency has a self-loop of exactly 1 on the diagonal,
caption-level co-occurrence counts off the diagonal, and is then row
normalized; it stays fixed while the concept node features are learned.

Two GCN layer forms are available. The default applies the activation to
the propagated features before the weight multiply,

    H_next = relu(A @ H) @ W,

with no activation on the final product. The ``conventional`` form is
relu(A @ H @ W) for the first layer and A @ H @ W for the last.
"""

from __future__ import annotations

import csv
from collections import Counter

import numpy as np

from .autodiff import Tensor, l2_normalize_rows, matmul, relu, softmax_rows
from .encoders import uniform_init

__all__ = [
    "ConceptGraph", "build_graph", "GcnParams", "gcn_forward",
    "ConsensusHead", "consensus_embed",
    "export_concepts_csv", "export_adjacency_csv",
]

GCN_FORMS = ("paper", "conventional")


class ConceptGraph:
    """Fixed row-stochastic adjacency over K concepts plus learnable node features."""

    def __init__(self, concepts: list[str], frequencies: list[int],
                 adjacency: np.ndarray, concept_embeddings: Tensor):
        self.concepts = concepts
        self.frequencies = frequencies
        self.adjacency = np.asarray(adjacency, dtype=np.float64)
        self.concept_embeddings = concept_embeddings
        k = len(concepts)
        if self.adjacency.shape != (k, k):
            raise ValueError(f"adjacency shape {self.adjacency.shape} != ({k}, {k})")
        if concept_embeddings.shape[0] != k:
            raise ValueError("one embedding row per concept required")

    @property
    def size(self) -> int:
        return len(self.concepts)


def build_graph(corpus, k: int, dim: int, rng: np.random.Generator,
                stopwords=frozenset()) -> ConceptGraph:
    """Concept selection and adjacency from an iterable of token lists.

    Concepts are the k most frequent non-stopword tokens (ties broken
    alphabetically). adjacency[i][j] counts captions containing both i and
    j for i != j, the diagonal is the self-loop 1, and rows are normalized
    to sum to 1.
    """
    if k < 1:
        raise ValueError(f"need at least one concept, got k={k}")
    captions = [list(tokens) for tokens in corpus]
    counts = Counter()
    for tokens in captions:
        counts.update(t for t in tokens if t not in stopwords)
    if len(counts) < k:
        raise ValueError(f"k={k} exceeds the {len(counts)} distinct "
                         "non-stopword tokens in the corpus")
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:k]
    concepts = [tok for tok, _ in ranked]
    frequencies = [cnt for _, cnt in ranked]
    concept_index = {tok: i for i, tok in enumerate(concepts)}

    adjacency = np.eye(k)
    for tokens in captions:
        present = sorted({concept_index[t] for t in tokens if t in concept_index})
        for a in range(len(present)):
            for b in range(a + 1, len(present)):
                i, j = present[a], present[b]
                adjacency[i, j] += 1.0
                adjacency[j, i] += 1.0
    adjacency /= adjacency.sum(axis=1, keepdims=True)

    embeddings = uniform_init(rng, (k, dim), dim)
    return ConceptGraph(concepts, frequencies, adjacency, embeddings)


class GcnParams:
    """Two layer weight matrices (d, d) and the layer form to apply."""

    def __init__(self, w0: Tensor, w1: Tensor, form: str = "paper"):
        if form not in GCN_FORMS:
            raise ValueError(f"unknown gcn form '{form}' (one of {GCN_FORMS})")
        self.w0 = w0
        self.w1 = w1
        self.form = form

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int,
             form: str = "paper") -> "GcnParams":
        return cls(uniform_init(rng, (dim, dim), dim),
                   uniform_init(rng, (dim, dim), dim), form)

    def named_parameters(self, prefix: str = "gcn") -> dict[str, Tensor]:
        return {f"{prefix}.w0": self.w0, f"{prefix}.w1": self.w1}


def gcn_forward(graph: ConceptGraph, params: GcnParams) -> Tensor:
    """Two propagation layers over the fixed adjacency: (K, d) -> (K, d)."""
    a = Tensor(graph.adjacency)
    h = graph.concept_embeddings
    if params.form == "paper":
        h = matmul(relu(matmul(a, h)), params.w0)
        h = matmul(relu(matmul(a, h)), params.w1)
    else:
        h = relu(matmul(matmul(a, h), params.w0))
        h = matmul(matmul(a, h), params.w1)
    return h


class ConsensusHead:
    """Linear map (d, K) predicting concept logits from an instance embedding."""

    def __init__(self, predictor: Tensor):
        self.predictor = predictor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, k: int) -> "ConsensusHead":
        return cls(uniform_init(rng, (dim, k), dim))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.predictor": self.predictor}


def consensus_embed(instance: Tensor, gcn_output: Tensor,
                    head: ConsensusHead) -> tuple[Tensor, Tensor]:
    """Consensus embedding and concept distribution for one instance.

    The head turns the instance vector into concept logits; their softmax
    weights the GCN node outputs, and the mixture is L2-normalized.
    Returns (embedding (d,), concept_dist (K,)).
    """
    if instance.ndim != 1:
        raise ValueError("instance embedding must be rank-1")
    dist = softmax_rows(matmul(instance, head.predictor))
    embedding = l2_normalize_rows(matmul(dist, gcn_output))
    return embedding, dist


def export_concepts_csv(graph: ConceptGraph, path) -> None:
    """Write (index, concept, frequency) rows for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "concept", "frequency"])
        for i, (tok, freq) in enumerate(zip(graph.concepts, graph.frequencies)):
            writer.writerow([i, tok, freq])


def export_adjacency_csv(graph: ConceptGraph, path) -> None:
    """Write the row-normalized adjacency with concept-labeled rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept"] + graph.concepts)
        for tok, row_vals in zip(graph.concepts, graph.adjacency):
            writer.writerow([tok] + [repr(float(v)) for v in row_vals])
