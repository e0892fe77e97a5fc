"""Training objectives: projection matching, projection classification,
per-head alignment, and the head-diversity penalty.

The matching loss (cmpm) pulls the batch matching distribution, computed
from dot products against the L2-normalized counterpart embeddings, toward
the identity-derived target distribution via KL divergence, in both
directions. The classification loss (cmpc) classifies each embedding after
projecting it onto its paired counterpart's direction, against row-normalized
classifier weights. Queries stay unnormalized; only targets and classifier
rows are normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import (
    Parameter,
    Rng,
    Tensor,
    concat_rows,
    l2_normalize_rows,
    log_softmax_rows,
    matmul,
    mul,
    row_sums,
    scale_rows,
    take_rows,
    texp,
    transpose,
)


@dataclass
class LossConfig:
    epsilon: float = 1e-8   # KL target smoothing
    lam: float = 0.2        # diversity weight
    num_identities: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")


class IdentityClassifier:
    """Identity logits from one alignment slot; rows normalized before use."""

    def __init__(self, num_identities: int, d: int, rng: Rng, name: str):
        if num_identities < 1:
            raise ConfigError(f"classifier needs at least 1 identity, got {num_identities}")
        self.num_identities = num_identities
        self.weights = Parameter(rng.truncated_normal((num_identities, d)), f"{name}.w")

    def parameters(self) -> list[Parameter]:
        return [self.weights]


@dataclass
class BatchEmbeddings:
    """Aligned visual/textual (n, d) embeddings with shared identity labels."""

    visual: Tensor
    textual: Tensor
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.visual.shape[0] != n or self.textual.shape[0] != n:
            raise ShapeError(
                f"batch embeddings misaligned: {self.visual.shape[0]} visual, "
                f"{self.textual.shape[0]} textual, {n} labels"
            )


def _match_targets(labels: np.ndarray, dtype) -> np.ndarray:
    same = labels[:, None] == labels[None, :]
    q = same.astype(dtype)
    return q / q.sum(axis=1, keepdims=True)


def _kl_to_targets(logits: Tensor, q: np.ndarray, eps: float) -> Tensor:
    lsm = log_softmax_rows(logits)
    log_q = Tensor(np.log(q + eps))
    n = logits.shape[0]
    return mul(texp(lsm), lsm - log_q).sum() / n


def cmpm(x: Tensor, z: Tensor, labels, eps: float = 1e-8) -> Tensor:
    """Bidirectional KL matching loss between two aligned embedding batches."""
    if eps <= 0:
        raise ConfigError(f"cmpm eps must be positive, got {eps}")
    labels = np.asarray(labels)
    if x.shape != z.shape or x.shape[0] != len(labels):
        raise ShapeError(f"cmpm: shapes {x.shape}, {z.shape}, {len(labels)} labels")
    q = _match_targets(labels, x.data.dtype)
    zbar = l2_normalize_rows(z)
    xbar = l2_normalize_rows(x)
    loss_x2z = _kl_to_targets(matmul(x, transpose(zbar)), q, eps)
    loss_z2x = _kl_to_targets(matmul(z, transpose(xbar)), q, eps)
    return loss_x2z + loss_z2x


def _projection_ce(queries: Tensor, targets_bar: Tensor, wbar: Tensor,
                   onehot: np.ndarray) -> Tensor:
    coef = row_sums(mul(queries, targets_bar))
    projected = scale_rows(targets_bar, coef)
    lsm = log_softmax_rows(matmul(projected, transpose(wbar)))
    n = queries.shape[0]
    return -(mul(lsm, Tensor(onehot)).sum() / n)


def cmpc(x: Tensor, z: Tensor, labels, classifier: IdentityClassifier) -> Tensor:
    """Identity classification of each embedding projected onto its pair."""
    labels = np.asarray(labels)
    if x.shape != z.shape or x.shape[0] != len(labels):
        raise ShapeError(f"cmpc: shapes {x.shape}, {z.shape}, {len(labels)} labels")
    if (labels < 0).any() or (labels >= classifier.num_identities).any():
        raise DataError(
            f"cmpc: label out of range for {classifier.num_identities} identities"
        )
    onehot = np.zeros((len(labels), classifier.num_identities), dtype=x.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    wbar = l2_normalize_rows(classifier.weights)
    zbar = l2_normalize_rows(z)
    xbar = l2_normalize_rows(x)
    loss_img = _projection_ce(x, zbar, wbar, onehot)
    loss_txt = _projection_ce(z, xbar, wbar, onehot)
    return loss_img + loss_txt


def part_alignment_loss(parts: list[BatchEmbeddings], classifiers: list[IdentityClassifier],
                        eps: float = 1e-8) -> Tensor:
    """Sum of cmpm + cmpc over the K per-head embedding batches."""
    if len(parts) != len(classifiers):
        raise ShapeError(
            f"part alignment: {len(parts)} head slots vs {len(classifiers)} classifiers"
        )
    total = None
    for slot, clf in zip(parts, classifiers):
        term = cmpm(slot.visual, slot.textual, slot.labels, eps)
        term = term + cmpc(slot.visual, slot.textual, slot.labels, clf)
        total = term if total is None else total + term
    return total


def _mean_offdiag_cosine(heads: Tensor) -> Tensor:
    k = heads.shape[0]
    unit = l2_normalize_rows(heads)
    gram = matmul(unit, transpose(unit))
    offdiag = 1.0 - np.eye(k, dtype=heads.data.dtype)
    return mul(gram, Tensor(offdiag)).sum() / (k * (k - 1))


def diversity_loss(visual_heads: Tensor, textual_heads: Tensor) -> Tensor:
    """Mean pairwise head cosine (both modalities) for one sample, in [-2, 2]."""
    if visual_heads.shape != textual_heads.shape or visual_heads.ndim != 2:
        raise ShapeError(
            f"diversity: head shapes {visual_heads.shape} vs {textual_heads.shape}"
        )
    if visual_heads.shape[0] < 2:
        raise ConfigError("diversity needs at least 2 heads")
    return _mean_offdiag_cosine(visual_heads) + _mean_offdiag_cosine(textual_heads)


def total_loss(global_emb: BatchEmbeddings, parts: list[BatchEmbeddings],
               cfg: LossConfig, classifiers: list[IdentityClassifier]):
    """Global alignment + per-head alignment + weighted diversity.

    ``classifiers[0]`` serves the global slot, ``classifiers[1:]`` the K head
    slots. Returns the scalar loss and a breakdown dict with the components
    (diversity is reported even when its weight is zero).
    """
    if len(classifiers) != len(parts) + 1:
        raise ShapeError(
            f"total loss: need {len(parts) + 1} classifiers, got {len(classifiers)}"
        )
    labels = global_emb.labels
    loss_global = cmpm(global_emb.visual, global_emb.textual, labels, cfg.epsilon)
    loss_global = loss_global + cmpc(global_emb.visual, global_emb.textual, labels,
                                     classifiers[0])
    loss_part = part_alignment_loss(parts, classifiers[1:], cfg.epsilon)

    n = len(labels)
    loss_div = None
    for i in range(n):
        heads_v = [take_rows(slot.visual, [i]) for slot in parts]
        heads_t = [take_rows(slot.textual, [i]) for slot in parts]
        per_sample = diversity_loss(concat_rows(heads_v), concat_rows(heads_t))
        loss_div = per_sample if loss_div is None else loss_div + per_sample
    loss_div = loss_div / n

    total = loss_global + loss_part + mul(loss_div, cfg.lam)
    breakdown = {
        "total": total.item(),
        "global": loss_global.item(),
        "part": loss_part.item(),
        "div": loss_div.item(),
    }
    return total, breakdown
