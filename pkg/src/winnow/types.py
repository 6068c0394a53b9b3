"""Core domain types: samples, embeddings, label spaces, annotations.

All types are immutable values and safe to share between threads. Status
changes go through :func:`transition`, which enforces the lifecycle DAG.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError, LifecycleError

UNIT_NORM_TOL = 1e-5

_ID_RE = re.compile(r"^[0-9a-f]{32}$")


def content_id(data: bytes) -> str:
    """128-bit content hash of raw bytes, as 32 lowercase hex chars.

    Identical bytes always map to the same id, which is what makes it the
    dedup key for ingestion.
    """
    return hashlib.blake2b(data, digest_size=16).hexdigest()


def text_id(text: str) -> str:
    """Content id of a text value (used to key text embeddings)."""
    return content_id(text.encode("utf-8"))


def is_sample_id(value: str) -> bool:
    return bool(_ID_RE.match(value))


class Status(str, Enum):
    RAW = "raw"
    LOW_SIM = "low_sim"
    REFINED = "refined"
    COMMITTED = "committed"
    DISCARDED = "discarded"
    ESCALATED = "escalated"


# Lifecycle DAG: the only legal forward moves for a sample.
LIFECYCLE: dict[Status, frozenset[Status]] = {
    Status.RAW: frozenset({Status.LOW_SIM, Status.REFINED}),
    Status.LOW_SIM: frozenset(),
    Status.REFINED: frozenset({Status.COMMITTED, Status.DISCARDED, Status.ESCALATED}),
    Status.COMMITTED: frozenset(),
    Status.DISCARDED: frozenset(),
    Status.ESCALATED: frozenset({Status.COMMITTED, Status.DISCARDED}),
}


class Stage(str, Enum):
    FILTER = "filter"
    DISTILL = "distill"
    RELABEL = "relabel"


@dataclass(frozen=True)
class Sample:
    """An image in the curation lifecycle.

    `keyword` is the crawl query that retrieved it; `description` is the
    VLM-generated feature description and must be present before any
    trimodal scoring.
    """

    id: str
    image_path: str
    keyword: str
    description: str | None = None
    status: Status = Status.RAW
    source_lang: str = "en"


def transition(sample: Sample, new_status: Status) -> Sample:
    """Move a sample along the lifecycle DAG; illegal moves raise."""
    if new_status == sample.status:
        return sample
    if new_status not in LIFECYCLE[sample.status]:
        raise LifecycleError(
            f"illegal status transition {sample.status.value} -> {new_status.value} "
            f"for sample {sample.id}"
        )
    return dataclasses.replace(sample, status=new_status)


class ExpertKind(str, Enum):
    """Embedding spaces the engine stores; dims are fixed per expert."""

    CLIP_IMAGE = "clip_image"
    CLIP_TEXT = "clip_text"
    DINOV2 = "dinov2"
    BEIT = "beit"

    @property
    def dim(self) -> int:
        return _EXPERT_DIMS[self]

    @property
    def wire_id(self) -> int:
        return _EXPERT_WIRE_IDS[self]


_EXPERT_DIMS = {
    ExpertKind.CLIP_IMAGE: 768,
    ExpertKind.CLIP_TEXT: 768,
    ExpertKind.DINOV2: 1024,
    ExpertKind.BEIT: 1024,
}

_EXPERT_WIRE_IDS = {
    ExpertKind.CLIP_IMAGE: 1,
    ExpertKind.CLIP_TEXT: 2,
    ExpertKind.DINOV2: 3,
    ExpertKind.BEIT: 4,
}

EXPERT_BY_WIRE_ID = {v: k for k, v in _EXPERT_WIRE_IDS.items()}


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    """Unit-normalize to float32, accumulating the norm in float64."""
    v64 = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v64))
    if not np.isfinite(norm) or norm == 0.0:
        raise DataError("cannot normalize zero or non-finite vector")
    out = (v64 / norm).astype(np.float32)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EmbeddingVector:
    expert: ExpertKind
    data: np.ndarray  # float32, unit norm

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != self.expert.dim:
            raise DataError(
                f"expert {self.expert.value} expects dim {self.expert.dim}, "
                f"got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite values in {self.expert.value} vector")
        norm = float(np.linalg.norm(arr.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise DataError(
                f"{self.expert.value} vector norm {norm:.8f} not unit within "
                f"{UNIT_NORM_TOL}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class ClassDef:
    id: str
    name: str


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class ids; the ordering defines argmax tie-breaking."""

    classes: tuple[ClassDef, ...]
    noise_class: str
    traces: tuple[str, ...]

    def __post_init__(self) -> None:
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate class ids in label space: {ids}")
        if self.noise_class not in ids:
            raise DataError(f"noise class {self.noise_class!r} not in classes {ids}")

    @property
    def class_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.classes)

    def index(self, class_id: str) -> int:
        for i, c in enumerate(self.classes):
            if c.id == class_id:
                return i
        raise KeyError(class_id)

    def display_name(self, class_id: str) -> str:
        return self.classes[self.index(class_id)].name


class AnnotationReason(str, Enum):
    SEED = "seed"
    CLUSTER_TRIAGE = "cluster_triage"
    LOW_FAS = "low_fas"
    BOUNDARY = "boundary"
    CONFLICT = "conflict"


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    label: str
    annotator: str
    round: int
    reason: AnnotationReason

    def __post_init__(self) -> None:
        if self.round < 0:
            raise DataError("annotation round must be >= 0")


@dataclass(frozen=True)
class RoundState:
    round: int
    stage: Stage
    counts: dict[str, int] = field(default_factory=dict)
    config_hash: str = ""
    rng_seed: int = 0

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "stage": self.stage.value,
            "counts": dict(sorted(self.counts.items())),
            "config_hash": self.config_hash,
            "rng_seed": self.rng_seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "RoundState":
        return RoundState(
            round=int(obj["round"]),
            stage=Stage(obj["stage"]),
            counts={k: int(v) for k, v in obj.get("counts", {}).items()},
            config_hash=str(obj.get("config_hash", "")),
            rng_seed=int(obj.get("rng_seed", 0)),
        )
