"""Inference-time similarity scoring and CMC Rank-k evaluation.

Scoring is text-to-image: each text query is ranked against the image
gallery by the sum of the global cosine and the K per-head part cosines
(or either term alone, for the ablation modes). Everything here is plain
numpy on detached embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

MODES = ("global", "part", "both")


@dataclass
class SampleEmbedding:
    """One sample's retrieval embedding: global vector plus K part vectors."""

    global_vec: np.ndarray  # (d,)
    parts: np.ndarray       # (K, d)
    identity: int


@dataclass
class RankMetrics:
    rank1: float
    rank5: float
    rank10: float
    num_queries: int
    excluded: int = 0

    def __post_init__(self):
        if not self.rank1 <= self.rank5 <= self.rank10:
            raise ShapeError(
                f"rank metrics not monotone: {self.rank1}, {self.rank5}, {self.rank10}"
            )

    def to_json(self, mode: str = "both") -> str:
        return json.dumps({
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank10": self.rank10,
            "num_queries": self.num_queries,
            "excluded": self.excluded,
            "mode": mode,
        })


def _cos(u: np.ndarray, v: np.ndarray, eps: float = 1e-12) -> float:
    denom = max(float(np.linalg.norm(u)), eps) * max(float(np.linalg.norm(v)), eps)
    return float(np.clip(float(u @ v) / denom, -1.0, 1.0))


def pair_similarity(img: SampleEmbedding, txt: SampleEmbedding, mode: str = "both") -> float:
    """cos(global, global) + sum_k cos(part_k, part_k), or either term alone."""
    if mode not in MODES:
        raise ShapeError(f"unknown scoring mode {mode!r}; expected one of {MODES}")
    if img.parts.shape != txt.parts.shape:
        raise ShapeError(f"part shapes differ: {img.parts.shape} vs {txt.parts.shape}")
    score = 0.0
    if mode in ("global", "both"):
        score += _cos(img.global_vec, txt.global_vec)
    if mode in ("part", "both"):
        score += sum(_cos(img.parts[k], txt.parts[k]) for k in range(img.parts.shape[0]))
    return score


def similarity_matrix(queries: list[SampleEmbedding], gallery: list[SampleEmbedding],
                      mode: str = "both") -> np.ndarray:
    """(num_queries, gallery_size) score matrix, S[i, j] = sim(gallery_j, query_i)."""
    if not gallery:
        raise DataError("similarity_matrix: empty gallery")
    if not queries:
        raise DataError("similarity_matrix: no queries")
    out = np.zeros((len(queries), len(gallery)), dtype=np.float64)
    for i, q in enumerate(queries):
        for j, g in enumerate(gallery):
            out[i, j] = pair_similarity(g, q, mode)
    return out


def cmc_ranks(scores: np.ndarray, query_ids, gallery_ids, ks=(1, 5, 10)) -> RankMetrics:
    """Fraction of queries with a same-identity gallery item in the top k.

    Ties break by ascending gallery index. Queries whose identity never
    appears in the gallery are excluded from the rates and tallied.
    """
    scores = np.asarray(scores)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if scores.shape != (len(query_ids), len(gallery_ids)):
        raise ShapeError(
            f"cmc: score shape {scores.shape} vs {len(query_ids)} queries x "
            f"{len(gallery_ids)} gallery items"
        )
    num_gallery = len(gallery_ids)
    hits = {k: 0 for k in ks}
    included = 0
    excluded = 0
    for i, qid in enumerate(query_ids):
        relevant = gallery_ids == qid
        if not relevant.any():
            excluded += 1
            continue
        included += 1
        order = np.argsort(-scores[i], kind="stable")
        first_hit = int(np.argmax(relevant[order]))
        for k in ks:
            if first_hit < min(k, num_gallery):
                hits[k] += 1
    denom = max(included, 1)
    rates = {k: hits[k] / denom for k in ks}
    return RankMetrics(rank1=rates[1], rank5=rates[5], rank10=rates[10],
                       num_queries=included, excluded=excluded)
