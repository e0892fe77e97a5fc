"""Synthetic paired datasets and manifest-driven loading.

A synthetic identity is a colored block pattern (images drawn as the
pattern plus Gaussian pixel noise) together with a small set of identity
words (captions shuffle those words among common fillers). Manifests are
JSON Lines with per-entry image path, caption, identity, and split tag.
The last image of each identity (and its captions) is held out as the test
split; identities are therefore shared across splits while images and
captions are not.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .fileio import read_rtf, write_rtf
from .tensor import Rng
from .encoders import OOV_ID, ImageSample, TextSample, Vocabulary, tokenize

_SYLLABLES = ["ka", "ro", "mi", "ta", "zu", "len", "por", "vash", "nim", "gel",
              "dar", "sol", "fen", "bri", "lox", "qua"]
_FILLERS = ["the", "person", "is", "wearing", "a", "with", "and", "has"]

_BLOCK_GRID = 4  # identity pattern is a 4x4 grid of colored blocks


@dataclass
class SynthSpec:
    num_ids: int = 20
    images_per_id: int = 5
    captions_per_image: int = 2
    image_size: int = 32
    vocab_words_per_id: int = 4
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("num_ids", "images_per_id", "captions_per_image",
                     "image_size", "vocab_words_per_id"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.image_size % _BLOCK_GRID:
            raise ConfigError(f"image_size must be divisible by {_BLOCK_GRID}")


@dataclass
class ManifestEntry:
    image: str
    caption: str
    identity: int
    split: str


def _identity_word(identity: int, slot: int) -> str:
    """Unique pseudo-word per (identity, slot), built from syllables."""
    code = identity * 64 + slot + 1
    word = ""
    while code:
        word += _SYLLABLES[code % len(_SYLLABLES)]
        code //= len(_SYLLABLES)
    return word


def _identity_pattern(identity: int, size: int, rng: Rng) -> np.ndarray:
    blocks = rng.uniform((_BLOCK_GRID, _BLOCK_GRID, 3)).astype(np.float32)
    reps = size // _BLOCK_GRID
    return np.repeat(np.repeat(blocks, reps, axis=0), reps, axis=1)


def _make_caption(words: list[str], rng: Rng) -> str:
    parts = list(words)
    rng.shuffle(parts)
    fillers = [
        _FILLERS[int(rng.integers(0, len(_FILLERS)))]
        for _ in range(3)
    ]
    tokens = fillers[:1] + parts + fillers[1:]
    rng.shuffle(tokens)
    return " ".join(tokens)


def generate_synthetic(spec: SynthSpec, out_dir) -> str:
    """Write images and a manifest; returns the manifest path.

    Identical specs (same seed) produce identical trees.
    """
    out_dir = str(out_dir)
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {img_dir}: {exc}") from exc

    root = Rng(spec.seed)
    entries: list[ManifestEntry] = []
    for identity in range(spec.num_ids):
        id_rng = root.child(identity)
        pattern = _identity_pattern(identity, spec.image_size, id_rng.child(0))
        words = [_identity_word(identity, s) for s in range(spec.vocab_words_per_id)]
        for img_idx in range(spec.images_per_id):
            noise_rng = id_rng.child(100 + img_idx)
            noise = noise_rng.normal(pattern.shape, std=spec.noise_std) if spec.noise_std > 0 \
                else np.zeros_like(pattern)
            pixels = np.clip(pattern + noise.astype(np.float32), 0.0, 1.0)
            rel = os.path.join("images", f"id{identity:03d}_img{img_idx:02d}.rtf")
            try:
                write_rtf(os.path.join(out_dir, rel), pixels)
            except OSError as exc:
                raise DataError(f"cannot write {os.path.join(out_dir, rel)}: {exc}") from exc
            held_out = spec.images_per_id >= 2 and img_idx == spec.images_per_id - 1
            split = "test" if held_out else "train"
            cap_rng = id_rng.child(200 + img_idx)
            for _ in range(spec.captions_per_image):
                entries.append(ManifestEntry(
                    image=rel, caption=_make_caption(words, cap_rng),
                    identity=identity, split=split,
                ))

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    try:
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(json.dumps({
                    "image": e.image, "caption": e.caption,
                    "identity": e.identity, "split": e.split,
                }) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write manifest {manifest_path}: {exc}") from exc
    return manifest_path


@dataclass
class PairedDataset:
    """In-memory dataset: one image per unique path, captions attached."""

    images: list[ImageSample]
    image_splits: list[str]
    captions: list[list[tuple[str, str]]]   # per image: (caption text, split)
    vocab: Vocabulary
    id_map: dict[int, int]
    oov_rate: float

    @property
    def num_identities(self) -> int:
        return len(self.id_map)

    def image_shape(self) -> tuple[int, int, int]:
        return self.images[0].pixels.shape

    def pairs(self, split: str) -> list[tuple[int, int]]:
        """(image index, caption index) pairs whose caption is in ``split``."""
        out = []
        for i, caps in enumerate(self.captions):
            for j, (_, cap_split) in enumerate(caps):
                if cap_split == split:
                    out.append((i, j))
        return out

    def tokenized(self, image_idx: int, caption_idx: int, max_len: int) -> TextSample:
        text, _ = self.captions[image_idx][caption_idx]
        return tokenize(text, self.vocab, max_len,
                        identity=self.images[image_idx].identity)


def load_manifest(manifest_path) -> list[ManifestEntry]:
    if not os.path.exists(manifest_path):
        raise DataError(f"manifest not found: {manifest_path}")
    entries = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(ManifestEntry(
                    image=obj["image"], caption=obj["caption"],
                    identity=int(obj["identity"]), split=obj["split"],
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{manifest_path}:{lineno + 1}: bad entry: {exc}") from exc
    if not entries:
        raise DataError(f"{manifest_path}: empty manifest")
    return entries


def load_dataset(manifest_path, id_map: dict[int, int] | None = None,
                 vocab: Vocabulary | None = None) -> PairedDataset:
    """Load images and captions; build the vocabulary from the train split.

    ``id_map``/``vocab`` may be supplied (e.g. from a training run) so that
    evaluation stays consistent; otherwise both are derived here. Identities
    are remapped to a contiguous 0..num_ids-1 range.
    """
    entries = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))

    if id_map is None:
        id_map = {orig: new for new, orig in enumerate(sorted({e.identity for e in entries}))}
    for e in entries:
        if e.identity not in id_map:
            raise DataError(f"identity {e.identity} missing from identity mapping")

    if vocab is None:
        train_texts = [e.caption for e in entries if e.split == "train"]
        if not train_texts:
            raise DataError(f"{manifest_path}: no train-split captions to build a vocabulary")
        vocab = Vocabulary.from_texts(train_texts)

    images: list[ImageSample] = []
    image_splits: list[str] = []
    captions: list[list[tuple[str, str]]] = []
    index_of: dict[str, int] = {}
    for e in entries:
        if e.image not in index_of:
            path = os.path.join(base, e.image)
            if not os.path.exists(path):
                raise DataError(f"image file missing for manifest entry: {path}")
            pixels = read_rtf(path)
            if pixels.ndim != 3:
                raise DataError(f"{path}: expected H x W x C pixels, got shape {pixels.shape}")
            index_of[e.image] = len(images)
            images.append(ImageSample(pixels=pixels, identity=id_map[e.identity]))
            image_splits.append(e.split)
            captions.append([])
        idx = index_of[e.image]
        captions[idx].append((e.caption, e.split))

    oov = total = 0
    for e in entries:
        if e.split == "train":
            continue
        for w in e.caption.lower().split():
            total += 1
            oov += vocab.id_of(w) == OOV_ID
    oov_rate = oov / total if total else 0.0

    return PairedDataset(images=images, image_splits=image_splits, captions=captions,
                         vocab=vocab, id_map=id_map, oov_rate=oov_rate)


@dataclass
class Batch:
    images: list[ImageSample]
    texts: list[TextSample]
    labels: np.ndarray


def batch_iterator(dataset: PairedDataset, split: str, batch_size: int, max_len: int,
                   seed: int, epoch: int, drop_last: bool = True):
    """Yield aligned image/text batches for one epoch.

    Each image pairs with one of its own captions, chosen uniformly per
    epoch; order reshuffles per epoch from the seed. The final partial
    batch is dropped when ``drop_last`` (training) and kept otherwise.
    """
    image_indices = [i for i, s in enumerate(dataset.image_splits) if s == split]
    if not image_indices:
        raise DataError(f"no images in split {split!r}")
    if batch_size > len(image_indices):
        raise ConfigError(
            f"batch_size {batch_size} exceeds split size {len(image_indices)}"
        )
    rng = Rng(seed).child(epoch)
    order = [image_indices[j] for j in rng.permutation(len(image_indices))]
    chosen = []
    for i in order:
        caps = [j for j, (_, s) in enumerate(dataset.captions[i]) if s == split]
        if not caps:
            raise DataError(f"image {i} has no captions in split {split!r}")
        chosen.append((i, caps[int(rng.integers(0, len(caps)))]))

    for start in range(0, len(chosen), batch_size):
        chunk = chosen[start:start + batch_size]
        if len(chunk) < batch_size and drop_last:
            break
        images = [dataset.images[i] for i, _ in chunk]
        texts = [dataset.tokenized(i, j, max_len) for i, j in chunk]
        labels = np.asarray([img.identity for img in images], dtype=np.int64)
        yield Batch(images=images, texts=texts, labels=labels)
