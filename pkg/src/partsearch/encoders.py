"""Toy transformer encoders mapping images and token sequences to feature
matrices with a prepended global token.

Both encoders are randomly initialized (truncated normal, std 0.02) small
pre-norm transformer stacks. The image path splits the image into fixed
patches and linearly projects them; the text path looks up word embeddings
from a whitespace/lowercase vocabulary. Row 0 of every output matrix is the
learned global token after encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import (
    Parameter,
    Rng,
    Tensor,
    add_rowvec,
    concat_cols,
    concat_rows,
    dropout,
    gelu,
    layer_norm_rows,
    matmul,
    slice_cols,
    softmax_rows,
    take_rows,
    transpose,
)

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"


@dataclass
class ImageSample:
    """Raw image with identity label; pixel values in [0, 1]."""

    pixels: np.ndarray  # (H, W, C)
    identity: int


@dataclass
class TextSample:
    """Token ids padded to a fixed length; ``length`` counts real words."""

    tokens: list[int]
    length: int
    identity: int


@dataclass
class EncoderOutput:
    """(U+1, d) features with row 0 the global token; mask flags valid rows."""

    features: Tensor
    mask: np.ndarray  # (U+1,) bool


@dataclass
class EncoderConfig:
    d: int = 32
    layers: int = 2
    attn_heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 8
    max_len: int = 24
    vocab_size: int = 2
    dropout: float = 0.0
    init_std: float = 0.02

    def __post_init__(self):
        if self.d % self.attn_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by attn_heads={self.attn_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


class Vocabulary:
    """Word-id mapping; line number is the id, lines 0/1 are PAD and OOV."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, OOV_TOKEN]:
            raise DataError(f"vocabulary must start with {PAD_TOKEN!r}, {OOV_TOKEN!r}")
        self.tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        words = sorted({w for text in texts for w in text.lower().split()})
        return cls([PAD_TOKEN, OOV_TOKEN] + words)

    def id_of(self, word: str) -> int:
        return self._ids.get(word, OOV_ID)


def tokenize(text: str, vocab: Vocabulary, max_len: int, identity: int = -1) -> TextSample:
    """Lowercase, whitespace-split, map to ids, truncate or pad to max_len."""
    words = text.lower().split()[:max_len]
    ids = [vocab.id_of(w) for w in words]
    ids += [PAD_ID] * (max_len - len(ids))
    return TextSample(tokens=ids, length=len(words), identity=identity)


def patchify(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """Split an (H, W, C) image into flattened patches, row-major over the grid."""
    if pixels.ndim != 3:
        raise ShapeError(f"patchify: expected (H, W, C) pixels, got shape {pixels.shape}")
    h, w, c = pixels.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"patchify: image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    tiles = pixels.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, p * p * c))


class TransformerBlock:
    """Pre-norm block: masked multi-head self-attention, then a 2-layer MLP."""

    def __init__(self, cfg: EncoderConfig, rng: Rng, name: str):
        d = cfg.d
        hidden = int(d * cfg.mlp_ratio)
        std = cfg.init_std
        self.cfg = cfg
        self.ln1_g = Parameter(np.ones(d), f"{name}.ln1.g")
        self.ln1_b = Parameter(np.zeros(d), f"{name}.ln1.b")
        self.wq = Parameter(rng.truncated_normal((d, d), std=std), f"{name}.attn.wq")
        self.bq = Parameter(np.zeros(d), f"{name}.attn.bq")
        # no key bias: softmax is shift-invariant per row, so it would be inert
        self.wk = Parameter(rng.truncated_normal((d, d), std=std), f"{name}.attn.wk")
        self.wv = Parameter(rng.truncated_normal((d, d), std=std), f"{name}.attn.wv")
        self.bv = Parameter(np.zeros(d), f"{name}.attn.bv")
        self.wo = Parameter(rng.truncated_normal((d, d), std=std), f"{name}.attn.wo")
        self.bo = Parameter(np.zeros(d), f"{name}.attn.bo")
        self.ln2_g = Parameter(np.ones(d), f"{name}.ln2.g")
        self.ln2_b = Parameter(np.zeros(d), f"{name}.ln2.b")
        self.w1 = Parameter(rng.truncated_normal((d, hidden), std=std), f"{name}.mlp.w1")
        self.b1 = Parameter(np.zeros(hidden), f"{name}.mlp.b1")
        self.w2 = Parameter(rng.truncated_normal((hidden, d), std=std), f"{name}.mlp.w2")
        self.b2 = Parameter(np.zeros(d), f"{name}.mlp.b2")

    def parameters(self) -> list[Parameter]:
        return [self.ln1_g, self.ln1_b, self.wq, self.bq, self.wk,
                self.wv, self.bv, self.wo, self.bo, self.ln2_g, self.ln2_b,
                self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: Tensor, mask: np.ndarray, rng: Rng | None = None,
                train: bool = False) -> Tensor:
        cfg = self.cfg
        if x.ndim != 2 or x.shape[1] != cfg.d:
            raise ShapeError(f"transformer_block: expected (U+1, {cfg.d}), got {x.shape}")
        if mask.shape != (x.shape[0],):
            raise ShapeError(f"transformer_block: mask length {mask.shape} vs {x.shape[0]} rows")
        if not mask[0]:
            raise ShapeError("transformer_block: global row must be valid")
        heads = cfg.attn_heads
        dh = cfg.d // heads
        scale = 1.0 / np.sqrt(dh)
        p = cfg.dropout if train else 0.0

        h = layer_norm_rows(x, self.ln1_g, self.ln1_b)
        q = add_rowvec(matmul(h, self.wq), self.bq)
        k = matmul(h, self.wk)
        v = add_rowvec(matmul(h, self.wv), self.bv)
        outs = []
        for i in range(heads):
            lo, hi = i * dh, (i + 1) * dh
            qi = slice_cols(q, lo, hi)
            ki = slice_cols(k, lo, hi)
            vi = slice_cols(v, lo, hi)
            att = softmax_rows(matmul(qi, transpose(ki)), scale=scale, mask=mask)
            outs.append(matmul(att, vi))
        attn_out = add_rowvec(matmul(concat_cols(outs), self.wo), self.bo)
        if p > 0:
            attn_out = dropout(attn_out, p, rng)
        x = x + attn_out

        m = layer_norm_rows(x, self.ln2_g, self.ln2_b)
        m = gelu(add_rowvec(matmul(m, self.w1), self.b1))
        m = add_rowvec(matmul(m, self.w2), self.b2)
        if p > 0:
            m = dropout(m, p, rng)
        return x + m


class ImageEncoder:
    """Patch projection + learned [IMG] token + positional embeddings + blocks."""

    def __init__(self, cfg: EncoderConfig, image_shape: tuple[int, int, int], rng: Rng):
        h, w, c = image_shape
        p = cfg.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        self.cfg = cfg
        self.image_shape = (h, w, c)
        self.num_patches = (h // p) * (w // p)
        d = cfg.d
        self.patch_w = Parameter(rng.truncated_normal((p * p * c, d), std=cfg.init_std), "img.patch.w")
        self.patch_b = Parameter(np.zeros(d), "img.patch.b")
        self.img_token = Parameter(rng.truncated_normal((1, d), std=cfg.init_std), "img.token")
        self.pos = Parameter(rng.truncated_normal((self.num_patches + 1, d), std=cfg.init_std), "img.pos")
        self.blocks = [TransformerBlock(cfg, rng, f"img.block{i}") for i in range(cfg.layers)]
        self.lnf_g = Parameter(np.ones(d), "img.lnf.g")
        self.lnf_b = Parameter(np.zeros(d), "img.lnf.b")

    def parameters(self) -> list[Parameter]:
        out = [self.patch_w, self.patch_b, self.img_token, self.pos]
        for blk in self.blocks:
            out.extend(blk.parameters())
        out.extend([self.lnf_g, self.lnf_b])
        return out

    def encode(self, samples: list[ImageSample], rng: Rng | None = None,
               train: bool = False) -> list[EncoderOutput]:
        outputs = []
        for sample in samples:
            if sample.pixels.shape != self.image_shape:
                raise ShapeError(
                    f"encode_image: sample shape {sample.pixels.shape} vs "
                    f"encoder shape {self.image_shape}"
                )
            patches = Tensor(patchify(sample.pixels, self.cfg.patch_size))
            x = add_rowvec(matmul(patches, self.patch_w), self.patch_b)
            x = concat_rows([self.img_token, x]) + self.pos
            mask = np.ones(self.num_patches + 1, dtype=bool)
            for blk in self.blocks:
                x = blk.forward(x, mask, rng=rng, train=train)
            x = layer_norm_rows(x, self.lnf_g, self.lnf_b)
            outputs.append(EncoderOutput(features=x, mask=mask))
        return outputs


class TextEncoder:
    """Embedding lookup + learned [CLS] token + positional embeddings + blocks."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        d = cfg.d
        self.cfg = cfg
        self.embed = Parameter(rng.truncated_normal((cfg.vocab_size, d), std=cfg.init_std), "txt.embed")
        self.cls_token = Parameter(rng.truncated_normal((1, d), std=cfg.init_std), "txt.token")
        self.pos = Parameter(rng.truncated_normal((cfg.max_len + 1, d), std=cfg.init_std), "txt.pos")
        self.blocks = [TransformerBlock(cfg, rng, f"txt.block{i}") for i in range(cfg.layers)]
        self.lnf_g = Parameter(np.ones(d), "txt.lnf.g")
        self.lnf_b = Parameter(np.zeros(d), "txt.lnf.b")

    def parameters(self) -> list[Parameter]:
        out = [self.embed, self.cls_token, self.pos]
        for blk in self.blocks:
            out.extend(blk.parameters())
        out.extend([self.lnf_g, self.lnf_b])
        return out

    def encode(self, samples: list[TextSample], rng: Rng | None = None,
               train: bool = False) -> list[EncoderOutput]:
        cfg = self.cfg
        outputs = []
        for sample in samples:
            if len(sample.tokens) != cfg.max_len:
                raise ShapeError(
                    f"encode_text: got {len(sample.tokens)} ids, expected max_len={cfg.max_len}"
                )
            ids = np.asarray(sample.tokens, dtype=np.int64)
            if (ids < 0).any() or (ids >= cfg.vocab_size).any():
                raise DataError(
                    f"encode_text: token id out of range for vocab size {cfg.vocab_size}"
                )
            x = take_rows(self.embed, ids)
            x = concat_rows([self.cls_token, x]) + self.pos
            mask = np.zeros(cfg.max_len + 1, dtype=bool)
            mask[: sample.length + 1] = True
            for blk in self.blocks:
                x = blk.forward(x, mask, rng=rng, train=train)
            x = layer_norm_rows(x, self.lnf_g, self.lnf_b)
            outputs.append(EncoderOutput(features=x, mask=mask))
        return outputs
