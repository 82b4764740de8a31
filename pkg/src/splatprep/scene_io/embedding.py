"""Feature embedding files: ``b"EMB1"`` + uint32 dim + dim float32, little-endian."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from splatprep.errors import FormatError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def decode_embedding(blob: bytes, source: str | None = None) -> EmbeddingVector:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", source=source, offset=len(blob))
    magic, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", source=source, offset=0)
    if dim <= 0:
        raise FormatError(f"dimension must be positive, got {dim}", source=source, offset=4)
    expected = _HEADER.size + 4 * dim
    if len(blob) != expected:
        raise FormatError(f"length {len(blob)} does not match header-implied {expected}",
                          source=source, offset=min(len(blob), expected))
    values = np.frombuffer(blob, dtype="<f4", count=dim, offset=_HEADER.size).copy()
    bad = np.nonzero(~np.isfinite(values))[0]
    if len(bad):
        raise FormatError(f"non-finite value at index {bad[0]}", source=source,
                          offset=_HEADER.size + 4 * int(bad[0]))
    return EmbeddingVector(values)


def encode_embedding(values) -> bytes:
    values = np.asarray(values, dtype="<f4").ravel()
    return _HEADER.pack(MAGIC, len(values)) + values.tobytes()


def load_embedding(path) -> EmbeddingVector:
    path = Path(path)
    return decode_embedding(path.read_bytes(), source=path.name)


def write_embedding(values, path) -> None:
    Path(path).write_bytes(encode_embedding(values))
