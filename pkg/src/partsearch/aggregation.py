"""K-head attention pooling of unit features into part-aware embeddings.

One module instance serves both modalities: the same K per-head projection
triples (query/key/value, each d x d, no bias) are applied to image feature
matrices and text feature matrices alike. Each head attends from the global
row over all valid rows and keeps only its global-row output, yielding one
part embedding per head. There is no output projection, residual, or norm
around the module.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import (
    Parameter,
    Rng,
    Tensor,
    concat_rows,
    matmul,
    softmax_rows,
    take_rows,
    transpose,
)
from .encoders import EncoderOutput


def attention_weights(q: Tensor, k: Tensor, mask=None, scale: float | None = None) -> Tensor:
    """Full (U+1, U+1) attention matrix: row-wise softmax of q @ k.T / sqrt(d).

    Masked (invalid) columns get exactly zero weight; every row sums to 1
    over the valid columns.
    """
    if q.shape != k.shape or q.ndim != 2:
        raise ShapeError(f"attention_weights: shapes {q.shape} and {k.shape} do not match")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[1])
    return softmax_rows(matmul(q, transpose(k)), scale=scale, mask=mask)


class PartAttention:
    """K independent full-width attention heads shared across modalities."""

    def __init__(self, num_heads: int, d: int, rng: Rng, init_std: float = 0.02):
        if num_heads < 1:
            raise ShapeError(f"part attention needs at least 1 head, got {num_heads}")
        self.num_heads = num_heads
        self.d = d
        self.heads = []
        for i in range(num_heads):
            wq = Parameter(rng.truncated_normal((d, d), std=init_std), f"parts.h{i}.wq")
            wk = Parameter(rng.truncated_normal((d, d), std=init_std), f"parts.h{i}.wk")
            wv = Parameter(rng.truncated_normal((d, d), std=init_std), f"parts.h{i}.wv")
            self.heads.append((wq, wk, wv))

    def parameters(self) -> list[Parameter]:
        return [w for head in self.heads for w in head]

    def aggregate(self, feats: EncoderOutput) -> tuple[Tensor, np.ndarray]:
        """Pool one sample's features into (K, d) part embeddings.

        Returns the stacked per-head global-row outputs and the attention
        trace, a (K, U+1) array of the global row's weights per head (zero
        at masked positions). Only the global row of each head's output is
        ever used, so only that row is computed.
        """
        x = feats.features
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"aggregate: features of width {x.shape} vs d={self.d}")
        scale = 1.0 / np.sqrt(self.d)
        global_row = take_rows(x, [0])
        rows = []
        trace = np.zeros((self.num_heads, x.shape[0]), dtype=x.data.dtype)
        for i, (wq, wk, wv) in enumerate(self.heads):
            q0 = matmul(global_row, wq)
            keys = matmul(x, wk)
            values = matmul(x, wv)
            att0 = softmax_rows(matmul(q0, transpose(keys)), scale=scale, mask=feats.mask)
            rows.append(matmul(att0, values))
            trace[i] = att0.data[0]
        return concat_rows(rows), trace
