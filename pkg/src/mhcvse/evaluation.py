"""Bidirectional retrieval metrics: cosine similarity, R@K, and their mean.

Image-to-text counts a hit when any caption of the query image lands in
the top K; text-to-image looks for the single owning image. Ranking ties
break toward the lower index, and mR is the mean of the six recalls
(R@1/5/10 in both directions).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

__all__ = ["RetrievalResult", "similarity_matrix", "recall_at_k", "rank_candidates",
           "evaluate", "write_eval_report"]

RECALL_KS = (1, 5, 10)


@dataclass
class RetrievalResult:
    """Six recalls and their mean; 'text' is image->text retrieval."""

    text_r1: float
    text_r5: float
    text_r10: float
    image_r1: float
    image_r5: float
    image_r10: float
    mr: float

    def as_rows(self) -> list[tuple[str, int, float]]:
        return [
            ("image_to_text", 1, self.text_r1),
            ("image_to_text", 5, self.text_r5),
            ("image_to_text", 10, self.text_r10),
            ("text_to_image", 1, self.image_r1),
            ("text_to_image", 5, self.image_r5),
            ("text_to_image", 10, self.image_r10),
        ]


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def similarity_matrix(img_embs, txt_embs) -> np.ndarray:
    """Cosine similarities for L2-normalized rows: (N, d') x (N_t, d') -> (N, N_t)."""
    a = _as_array(img_embs)
    b = _as_array(txt_embs)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("similarity_matrix needs rank-2 embedding matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Candidate indices per query, best first; equal scores keep lower index."""
    scores = np.asarray(scores)
    return np.argsort(-scores, axis=-1, kind="stable")


def recall_at_k(scores, relevant, k: int) -> float:
    """Fraction of queries with a relevant candidate in the top k by score.

    ``relevant[i]`` is the collection of relevant column indices for query
    row i. k larger than the candidate count retrieves everything.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = _as_array(scores)
    if scores.ndim != 2:
        raise ValueError("scores must be a rank-2 matrix")
    if len(relevant) != scores.shape[0]:
        raise ValueError(f"{len(relevant)} relevance sets for {scores.shape[0]} queries")
    order = rank_candidates(scores)
    hits = 0
    for i, rel in enumerate(relevant):
        rel = set(rel)
        if not rel:
            raise ValueError(f"query {i} has no relevant candidates")
        if rel.intersection(order[i, :k].tolist()):
            hits += 1
    return hits / scores.shape[0]


def evaluate(model, dataset, level: str | None = None) -> RetrievalResult:
    """Both retrieval directions at K = 1, 5, 10 for one split."""
    img, txt, image_ids, owner = model.embed_dataset(dataset, level)
    scores = similarity_matrix(img, txt)
    n_images = len(image_ids)
    captions_of = [np.nonzero(owner == i)[0].tolist() for i in range(n_images)]
    for i, caps in enumerate(captions_of):
        if not caps:
            raise ValueError(f"image {image_ids[i]} has no captions")
    t_r = [recall_at_k(scores, captions_of, k) for k in RECALL_KS]
    owner_sets = [[int(o)] for o in owner]
    i_r = [recall_at_k(scores.T, owner_sets, k) for k in RECALL_KS]
    mr = float(np.mean(t_r + i_r))
    return RetrievalResult(t_r[0], t_r[1], t_r[2], i_r[0], i_r[1], i_r[2], mr)


def write_eval_report(path, result: RetrievalResult) -> None:
    """CSV with one row per direction/K pair and a final mR row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction", "k", "recall"])
        for direction, k, value in result.as_rows():
            writer.writerow([direction, k, repr(value)])
        writer.writerow(["mean", "", repr(result.mr)])
