"""Pair-level retrieval: rank candidates by RANSAC inlier count.

AUROC and AUPRC are pooled over every (query, candidate) pair; Recall@K is
averaged per query, with score ties broken by ascending candidate id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ProtocolConfig
from .imaging import read_image
from .manifest import RetrievalRecord
from .matching import MatcherSpec, make_matcher
from .pipeline import register_images, with_budget

RETRIEVAL_THRESHOLD = 3.0
DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalQuery:
    query_id: str
    candidate_ids: tuple[str, ...]
    labels: tuple[bool, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if not len(self.candidate_ids) == len(self.labels) == len(self.scores):
            raise ValueError("candidate_ids, labels and scores differ in length")
        if sum(self.labels) != 1:
            raise ValueError(f"query {self.query_id}: expected exactly one positive")
        if any(s < 0 for s in self.scores):
            raise ValueError("scores must be >= 0")

    def rank_of_positive(self) -> int:
        """1-based rank of the positive under (score desc, candidate id asc)."""
        order = sorted(range(len(self.scores)), key=lambda i: (-self.scores[i], self.candidate_ids[i]))
        return 1 + [self.labels[i] for i in order].index(True)


@dataclass(frozen=True)
class RetrievalSummary:
    auroc: float
    auprc: float
    recall_at: dict[int, float] = field(default_factory=dict)
    query_count: int = 0
    pair_count: int = 0

    def as_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "query_count": self.query_count,
            "pair_count": self.pair_count,
        }


def auroc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Mann-Whitney U / (n_pos * n_neg), ties counted as one half."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.sort(np.asarray(scores_neg, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auroc needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    equal = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * equal.sum()) / (pos.size * neg.size))


def auprc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Step-interpolated area under the PR curve; tied scores form one threshold."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auprc needs at least one positive and one negative")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp = np.cumsum(labels)[ends]
    seen = ends + 1
    precision = tp / seen
    recall = tp / pos.size
    steps = np.diff(np.r_[0.0, recall])
    # sequential sum keeps the result independent of numpy's pairwise summation
    return float(sum((steps * precision).tolist()))


def recall_at_k(queries: Sequence[RetrievalQuery], ks: Sequence[int]) -> dict[int, float]:
    if not queries:
        raise ValueError("recall_at_k needs at least one query")
    if any(k < 1 for k in ks):
        raise ValueError("K must be >= 1")
    ranks = np.array([q.rank_of_positive() for q in queries])
    return {int(k): float((ranks <= k).mean()) for k in ks}


def summarize_retrieval(queries: Sequence[RetrievalQuery], ks: Sequence[int] = DEFAULT_KS) -> RetrievalSummary:
    pos = [s for q in queries for s, l in zip(q.scores, q.labels) if l]
    neg = [s for q in queries for s, l in zip(q.scores, q.labels) if not l]
    return RetrievalSummary(
        auroc(pos, neg), auprc(pos, neg), recall_at_k(queries, ks), len(queries), len(pos) + len(neg)
    )


def retrieval_config(base: ProtocolConfig | None = None) -> ProtocolConfig:
    """Affine geometry at a 3 px threshold; other fields from ``base``."""
    return (base or ProtocolConfig()).with_(geometry="affine", ransac_threshold=RETRIEVAL_THRESHOLD)


def score_candidates(
    query_img: np.ndarray,
    candidates: Sequence[np.ndarray],
    matcher: MatcherSpec | None = None,
    config: ProtocolConfig | None = None,
) -> list[int]:
    """Inlier count per candidate; a failed registration scores 0."""
    if not candidates:
        raise ValueError("empty candidate pool")
    config = config or retrieval_config()
    spec = with_budget(matcher or MatcherSpec(), config)
    scores = []
    with make_matcher(spec) as m:
        for k, cand in enumerate(candidates):
            r = register_images(query_img, cand, config, m, pair_id=f"candidate{k}")
            scores.append(r.inlier_count if r.ok else 0)
    return scores


def run_retrieval(
    records: Sequence[RetrievalRecord],
    matcher: MatcherSpec | None = None,
    config: ProtocolConfig | None = None,
    ks: Sequence[int] = DEFAULT_KS,
) -> tuple[list[RetrievalQuery], RetrievalSummary]:
    queries = []
    for rec in records:
        q = read_image(rec.query_path)
        cands = [read_image(p) for p in rec.candidate_paths]
        scores = score_candidates(q, cands, matcher, config)
        labels = tuple(cid == rec.positive for cid in rec.candidate_ids)
        queries.append(RetrievalQuery(rec.query_id, rec.candidate_ids, labels, tuple(scores)))
    return queries, summarize_retrieval(queries, ks)
