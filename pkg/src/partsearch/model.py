"""Full retrieval model: both encoders, the shared part-attention pool,
and the per-slot identity classifiers, with checkpoint save/load."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import PartAttention
from .encoders import (
    EncoderConfig,
    EncoderOutput,
    ImageEncoder,
    ImageSample,
    TextEncoder,
    TextSample,
)
from .errors import ConfigError
from .fileio import load_checkpoint, save_checkpoint
from .losses import BatchEmbeddings, IdentityClassifier, LossConfig, total_loss
from .retrieval import SampleEmbedding
from .tensor import Parameter, Rng, Tensor, concat_rows, no_grad, take_rows


@dataclass
class ModelConfig:
    d: int = 32
    layers: int = 2
    attn_heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    patch_size: int = 8
    max_len: int = 24
    num_heads: int = 4          # K part-attention heads
    num_identities: int = 1
    vocab_size: int = 2
    image_shape: tuple[int, int, int] = (32, 32, 3)
    init_std: float = 0.02

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d=self.d, layers=self.layers, attn_heads=self.attn_heads,
            mlp_ratio=self.mlp_ratio, patch_size=self.patch_size,
            max_len=self.max_len, vocab_size=self.vocab_size, dropout=self.dropout,
            init_std=self.init_std,
        )


class PersonSearchModel:
    """Dual encoders + shared K-head part attention + identity classifiers."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = Rng(seed)
        enc_cfg = cfg.encoder_config()
        self.image_encoder = ImageEncoder(enc_cfg, cfg.image_shape, rng.child(1))
        self.text_encoder = TextEncoder(enc_cfg, rng.child(2))
        self.parts = PartAttention(cfg.num_heads, cfg.d, rng.child(3), init_std=cfg.init_std)
        clf_rng = rng.child(4)
        self.classifiers = [
            IdentityClassifier(cfg.num_identities, cfg.d, clf_rng, f"clf.slot{i}")
            for i in range(cfg.num_heads + 1)
        ]
        self.dropout_rng = rng.child(5)

    def parameters(self) -> list[Parameter]:
        out = self.image_encoder.parameters() + self.text_encoder.parameters()
        out += self.parts.parameters()
        for clf in self.classifiers:
            out += clf.parameters()
        return out

    # -- forward -------------------------------------------------------------

    def encode_images(self, samples: list[ImageSample], train: bool = False):
        return self.image_encoder.encode(samples, rng=self.dropout_rng, train=train)

    def encode_texts(self, samples: list[TextSample], train: bool = False):
        return self.text_encoder.encode(samples, rng=self.dropout_rng, train=train)

    def _globals_and_parts(self, encoded: list[EncoderOutput]):
        """Per sample: the (1, d) global row and the (K, d) head embeddings."""
        globals_rows = [take_rows(out.features, [0]) for out in encoded]
        head_rows = []
        traces = []
        for out in encoded:
            heads, trace = self.parts.aggregate(out)
            head_rows.append(heads)
            traces.append(trace)
        return globals_rows, head_rows, traces

    def batch_embeddings(self, images: list[ImageSample], texts: list[TextSample],
                         labels: np.ndarray, train: bool = False):
        """Assemble the global and K per-head aligned embedding batches."""
        enc_v = self.encode_images(images, train=train)
        enc_t = self.encode_texts(texts, train=train)
        gv, hv, _ = self._globals_and_parts(enc_v)
        gt, ht, _ = self._globals_and_parts(enc_t)
        global_emb = BatchEmbeddings(
            visual=concat_rows(gv), textual=concat_rows(gt), labels=labels,
        )
        parts = []
        for k in range(self.cfg.num_heads):
            parts.append(BatchEmbeddings(
                visual=concat_rows([take_rows(h, [k]) for h in hv]),
                textual=concat_rows([take_rows(h, [k]) for h in ht]),
                labels=labels,
            ))
        return global_emb, parts

    def loss_on_batch(self, batch, loss_cfg: LossConfig):
        global_emb, parts = self.batch_embeddings(
            batch.images, batch.texts, batch.labels, train=True,
        )
        return total_loss(global_emb, parts, loss_cfg, self.classifiers)

    # -- inference -----------------------------------------------------------

    def embed_image_samples(self, samples: list[ImageSample]) -> list[SampleEmbedding]:
        with no_grad():
            encoded = self.encode_images(samples)
            return self._to_sample_embeddings(encoded, [s.identity for s in samples])

    def embed_text_samples(self, samples: list[TextSample]) -> list[SampleEmbedding]:
        with no_grad():
            encoded = self.encode_texts(samples)
            return self._to_sample_embeddings(encoded, [s.identity for s in samples])

    def _to_sample_embeddings(self, encoded, identities) -> list[SampleEmbedding]:
        out = []
        for feats, identity in zip(encoded, identities):
            heads, _ = self.parts.aggregate(feats)
            out.append(SampleEmbedding(
                global_vec=feats.features.data[0].copy(),
                parts=heads.data.copy(),
                identity=int(identity),
            ))
        return out

    def attention_traces(self, encoded: EncoderOutput) -> np.ndarray:
        with no_grad():
            _, trace = self.parts.aggregate(encoded)
        return trace

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        entries: dict[str, np.ndarray] = {}
        for p in self.parameters():
            entries[p.name] = p.data
            entries[p.name + "#m"] = p.adam_m
            entries[p.name + "#v"] = p.adam_v
            entries[p.name + "#t"] = np.asarray([p.adam_t], dtype=np.float32)
        for key, val in (extra or {}).items():
            entries["extra." + key] = np.asarray(val, dtype=np.float32)
        save_checkpoint(path, entries)

    def load(self, path) -> dict[str, np.ndarray]:
        """Restore parameters and optimizer state; returns any extra entries."""
        entries = load_checkpoint(path)
        for p in self.parameters():
            if p.name not in entries:
                raise ConfigError(f"checkpoint {path} missing parameter {p.name}")
            stored = entries[p.name]
            if tuple(stored.shape) != tuple(p.shape):
                raise ConfigError(
                    f"checkpoint {path}: parameter {p.name} has shape "
                    f"{tuple(stored.shape)}, model expects {tuple(p.shape)} "
                    f"(K/d mismatch between checkpoint and config?)"
                )
            p.data[...] = stored.astype(p.data.dtype)
            if p.name + "#m" in entries:
                p.adam_m[...] = entries[p.name + "#m"].astype(p.data.dtype)
                p.adam_v[...] = entries[p.name + "#v"].astype(p.data.dtype)
                p.adam_t = int(entries[p.name + "#t"][0])
        return {k[len("extra."):]: v for k, v in entries.items() if k.startswith("extra.")}
