"""Binary embedding container.

Little-endian layout:

    magic   4 bytes  b"RCCR"
    version u16      1
    expert  u16      wire id of the embedding space
    dim     u32
    count   u64
    records count x (16-byte id, dim x f32)

Records are written sorted by id so identical inputs produce identical
bytes. Vectors are validated to be finite and unit-norm on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .manifest import atomic_write_bytes
from .types import EXPERT_BY_WIRE_ID, UNIT_NORM_TOL, EmbeddingVector, ExpertKind

MAGIC = b"RCCR"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")


@dataclass
class EmbeddingStore:
    """All vectors of one expert, keyed by 32-hex-char content id."""

    expert: ExpertKind
    vectors: dict[str, np.ndarray]

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __getitem__(self, key: str) -> np.ndarray:
        return self.vectors[key]

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, key: str) -> np.ndarray | None:
        return self.vectors.get(key)

    def as_embedding(self, key: str) -> EmbeddingVector:
        return EmbeddingVector(expert=self.expert, data=self.vectors[key])


def save_embeddings(path: Path, store: EmbeddingStore) -> None:
    dim = store.expert.dim
    chunks = [_HEADER.pack(MAGIC, VERSION, store.expert.wire_id, dim, len(store.vectors))]
    for key in sorted(store.vectors):
        vec = np.asarray(store.vectors[key], dtype=np.float32)
        if vec.shape != (dim,):
            raise DataError(f"vector for {key} has shape {vec.shape}, expected ({dim},)")
        chunks.append(bytes.fromhex(key))
        chunks.append(vec.astype("<f4").tobytes())
    atomic_write_bytes(Path(path), b"".join(chunks))


def load_embeddings(path: Path) -> EmbeddingStore:
    """Read a container; every vector must be finite and unit-norm."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, expert_id, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if expert_id not in EXPERT_BY_WIRE_ID:
        raise FormatError(f"{path}: unknown expert id {expert_id}")
    expert = EXPERT_BY_WIRE_ID[expert_id]
    if dim != expert.dim:
        raise FormatError(
            f"{path}: header dim {dim} does not match expert {expert.value} dim {expert.dim}"
        )
    record_size = 16 + 4 * dim
    payload = len(data) - _HEADER.size
    if payload != count * record_size:
        # Report the record index at which the fixed-size framing breaks.
        broken_at = min(count, payload // record_size)
        raise FormatError(
            f"{path}: payload is {payload} bytes but {count} records of dim {dim} "
            f"need {count * record_size}; record framing breaks at index {broken_at}"
        )
    vectors: dict[str, np.ndarray] = {}
    offset = _HEADER.size
    for i in range(count):
        key = data[offset : offset + 16].hex()
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + 16).copy()
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: non-finite values in record {i} ({key})")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise DataError(
                f"{path}: record {i} ({key}) norm {norm:.8f} is not unit within {UNIT_NORM_TOL}"
            )
        vec.setflags(write=False)
        vectors[key] = vec
        offset += record_size
    return EmbeddingStore(expert=expert, vectors=vectors)


def load_or_empty(path: Path, expert: ExpertKind) -> EmbeddingStore:
    path = Path(path)
    if not path.exists():
        return EmbeddingStore(expert=expert, vectors={})
    store = load_embeddings(path)
    if store.expert != expert:
        raise FormatError(f"{path}: contains {store.expert.value}, expected {expert.value}")
    return store
