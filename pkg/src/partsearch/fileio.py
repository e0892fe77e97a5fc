"""On-disk formats: RTF1 raw tensors, checkpoints, vocabulary files.

RTF1 is an ASCII header line ``RTF1 <ndim> <dim0> <dim1> ...`` followed by
little-endian float32 values in row-major order. Checkpoints are a manifest
header (entry count, then one name per line) followed by one RTF1 block per
entry, concatenated in manifest order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError

_CKPT_MAGIC = "CKPT1"


def write_rtf(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        _write_rtf_block(fh, arr)


def _write_rtf_block(fh, arr: np.ndarray) -> None:
    dims = " ".join(str(d) for d in arr.shape)
    header = f"RTF1 {arr.ndim} {dims}".rstrip() + "\n"
    fh.write(header.encode("ascii"))
    fh.write(arr.astype("<f4").tobytes(order="C"))


def read_rtf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_rtf_block(fh, str(path))


def _read_line(fh, where: str) -> str:
    raw = fh.readline()
    if not raw.endswith(b"\n"):
        raise DataError(f"{where}: truncated header line")
    return raw.decode("ascii", errors="replace").rstrip("\n")


def _read_rtf_block(fh, where: str) -> np.ndarray:
    line = _read_line(fh, where)
    fields = line.split()
    if not fields or fields[0] != "RTF1":
        raise DataError(f"{where}: bad RTF1 magic in header {line!r}")
    try:
        ndim = int(fields[1])
        dims = [int(v) for v in fields[2:]]
    except (IndexError, ValueError) as exc:
        raise DataError(f"{where}: malformed RTF1 header {line!r}") from exc
    if len(dims) != ndim or any(d <= 0 for d in dims):
        raise DataError(f"{where}: RTF1 header dims {dims} do not match ndim {ndim}")
    count = int(np.prod(dims))
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise DataError(f"{where}: expected {count} float32 values, file is short")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)


def save_checkpoint(path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays as a manifest header plus RTF1 blocks."""
    names = list(entries.keys())
    with open(path, "wb") as fh:
        fh.write(f"{_CKPT_MAGIC} {len(names)}\n".encode("ascii"))
        for name in names:
            fh.write((name + "\n").encode("utf-8"))
        for name in names:
            arr = np.atleast_1d(np.asarray(entries[name], dtype="<f4"))
            _write_rtf_block(fh, arr)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    where = str(path)
    with open(path, "rb") as fh:
        head = _read_line(fh, where).split()
        if len(head) != 2 or head[0] != _CKPT_MAGIC:
            raise DataError(f"{where}: bad checkpoint magic")
        try:
            count = int(head[1])
        except ValueError as exc:
            raise DataError(f"{where}: malformed checkpoint header") from exc
        names = [_read_line(fh, where) for _ in range(count)]
        return {name: _read_rtf_block(fh, f"{where}:{name}") for name in names}


def save_vocab(path, tokens: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + "\n")


def load_vocab_tokens(path) -> list[str]:
    if not os.path.exists(path):
        raise DataError(f"vocabulary file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    if len(tokens) < 2:
        raise DataError(f"{path}: vocabulary needs at least PAD and OOV lines")
    return tokens
