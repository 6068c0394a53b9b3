"""Stage-1 filtering: fused trimodal similarity, clustering, human triage.

A sample's image, VLM description, and crawl keyword give three pairwise
cosines that are fused by configured weights into one score; samples below
the threshold are set aside. Survivors get a 1536-d embedding (image half
concatenated with description half, each unit-norm) and are clustered with
HDBSCAN; a small per-cluster sample is human-labeled, clusters are bucketed
strong/mixed/discard from the mean relevance, and the bucket exemplars feed
a prompt-revision request back to the VLM.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping

import numpy as np
from sklearn.cluster import HDBSCAN

from .errors import PreconditionError
from .rng import generator
from .types import EmbeddingVector, ExpertKind, Sample

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-6

STRONG_MIN = 0.8
DISCARD_MAX = 0.2

OUTLIER_CLUSTER = -1


@dataclass(frozen=True)
class TrimodalScore:
    sample_id: str
    sim_img_desc: float
    sim_desc_kw: float
    sim_img_kw: float
    fused: float


def score_trimodal(sample: Sample, img_emb: EmbeddingVector, desc_emb: EmbeddingVector,
                   kw_emb: EmbeddingVector, weights: tuple[float, float, float]) -> TrimodalScore:
    """Three pairwise cosines fused by `weights` (img-desc, desc-kw, img-kw)."""
    if sample.description is None:
        raise PreconditionError(f"sample {sample.id} has no description to score")
    w1, w2, w3 = weights
    if abs(w1 + w2 + w3 - 1.0) > WEIGHT_SUM_TOL:
        raise PreconditionError(f"fusion weights must sum to 1, got {weights}")
    if min(weights) < 0:
        raise PreconditionError(f"fusion weights must be non-negative, got {weights}")
    img = img_emb.data.astype(np.float64)
    desc = desc_emb.data.astype(np.float64)
    kw = kw_emb.data.astype(np.float64)

    def cosine(a, b):
        return float(np.clip(a @ b, -1.0, 1.0))

    sim_img_desc = cosine(img, desc)
    sim_desc_kw = cosine(desc, kw)
    sim_img_kw = cosine(img, kw)
    fused = w1 * sim_img_desc + w2 * sim_desc_kw + w3 * sim_img_kw
    if not math.isfinite(fused):
        raise PreconditionError(f"non-finite fused score for sample {sample.id}")
    return TrimodalScore(
        sample_id=sample.id,
        sim_img_desc=sim_img_desc,
        sim_desc_kw=sim_desc_kw,
        sim_img_kw=sim_img_kw,
        fused=fused,
    )


def split_by_threshold(scores: list[TrimodalScore], threshold: float) -> tuple[set[str], set[str]]:
    """Partition ids into (high, low) by fused score; the boundary is high."""
    if not math.isfinite(threshold):
        raise PreconditionError("threshold must be finite")
    high = {s.sample_id for s in scores if s.fused >= threshold}
    low = {s.sample_id for s in scores} - high
    return high, low


@dataclass(frozen=True)
class EnhancedEmbedding:
    """Image and description embeddings concatenated (each half unit-norm)."""

    sample_id: str
    vector: np.ndarray  # float32, length 1536, norm sqrt(2)


def build_enhanced_embedding(sample: Sample, img_emb: EmbeddingVector,
                             txt_emb: EmbeddingVector) -> EnhancedEmbedding:
    if img_emb.expert != ExpertKind.CLIP_IMAGE:
        raise TypeError(f"image half must be clip_image, got {img_emb.expert.value}")
    if txt_emb.expert != ExpertKind.CLIP_TEXT:
        raise TypeError(f"text half must be clip_text, got {txt_emb.expert.value}")
    vector = np.concatenate([img_emb.data, txt_emb.data]).astype(np.float32)
    vector.setflags(write=False)
    return EnhancedEmbedding(sample_id=sample.id, vector=vector)


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int = 15
    min_samples: int = 5


def cluster(embeddings: list[EnhancedEmbedding],
            params: ClusterParams = ClusterParams()) -> dict[str, int]:
    """Density-cluster enhanced embeddings; outliers get cluster -1.

    Input order does not matter: rows are sorted by sample id before
    clustering, which together with HDBSCAN's determinism makes the
    assignment reproducible.
    """
    if not embeddings:
        return {}
    ordered = sorted(embeddings, key=lambda e: e.sample_id)
    if len(ordered) < params.min_cluster_size:
        logger.warning(
            "only %d samples (< min_cluster_size %d); marking all as outliers",
            len(ordered), params.min_cluster_size,
        )
        return {e.sample_id: OUTLIER_CLUSTER for e in ordered}
    matrix = np.vstack([e.vector for e in ordered])
    # allow_single_cluster keeps single-topic pools (and degenerate
    # duplicate sets) from collapsing entirely into outliers.
    labels = HDBSCAN(
        min_cluster_size=params.min_cluster_size,
        min_samples=params.min_samples,
        metric="euclidean",
        allow_single_cluster=True,
    ).fit_predict(matrix)
    return {e.sample_id: int(label) for e, label in zip(ordered, labels)}


class TriageBucket(str, Enum):
    STRONG = "strong"
    MIXED = "mixed"
    DISCARD = "discard"


@dataclass(frozen=True)
class ClusterTriage:
    cluster_id: int
    member_ids: tuple[str, ...]
    sampled_ids: tuple[str, ...]
    score: float
    bucket: TriageBucket


def bucket_for(score: float, strong_min: float = STRONG_MIN,
               discard_max: float = DISCARD_MAX) -> TriageBucket:
    if score >= strong_min:
        return TriageBucket.STRONG
    if score <= discard_max:
        return TriageBucket.DISCARD
    return TriageBucket.MIXED


def sample_for_triage(assignments: Mapping[str, int], n_per: int, seed: int,
                      round_no: int = 0) -> dict[int, list[str]]:
    """Pick min(n_per, cluster size) ids per cluster for human labeling.

    The outlier pseudo-cluster (-1) is not triaged; its members stay in the
    refined pool for the distillation stage to sort out.
    """
    clusters: dict[int, list[str]] = {}
    for sid, cid in assignments.items():
        if cid == OUTLIER_CLUSTER:
            continue
        clusters.setdefault(cid, []).append(sid)
    picked: dict[int, list[str]] = {}
    for cid in sorted(clusters):
        members = sorted(clusters[cid])
        take = min(n_per, len(members))
        rng = generator(seed, "triage", str(round_no), str(cid))
        chosen = rng.choice(len(members), size=take, replace=False)
        picked[cid] = [members[i] for i in sorted(chosen)]
    return picked


def triage_clusters(assignments: Mapping[str, int], labels: Mapping[str, int], n_per: int,
                    seed: int, round_no: int = 0, strong_min: float = STRONG_MIN,
                    discard_max: float = DISCARD_MAX) -> list[ClusterTriage]:
    """Score each cluster from its sampled relevance labels and bucket it.

    `labels` maps sampled ids to 0/1 relevance; every sampled id must be
    covered.
    """
    picked = sample_for_triage(assignments, n_per, seed, round_no)
    missing = [sid for ids in picked.values() for sid in ids if sid not in labels]
    if missing:
        raise PreconditionError(f"unlabeled triage samples: {sorted(missing)}")
    members: dict[int, list[str]] = {}
    for sid, cid in assignments.items():
        if cid != OUTLIER_CLUSTER:
            members.setdefault(cid, []).append(sid)
    out = []
    for cid in sorted(picked):
        sampled = picked[cid]
        score = sum(int(labels[sid]) for sid in sampled) / len(sampled)
        out.append(
            ClusterTriage(
                cluster_id=cid,
                member_ids=tuple(sorted(members[cid])),
                sampled_ids=tuple(sampled),
                score=score,
                bucket=bucket_for(score, strong_min, discard_max),
            )
        )
    return out


PROMPT_SECTIONS = ("retain-worthy traits", "ambiguous traits", "removal criteria")

_BUCKET_SECTION = {
    TriageBucket.STRONG: PROMPT_SECTIONS[0],
    TriageBucket.MIXED: PROMPT_SECTIONS[1],
    TriageBucket.DISCARD: PROMPT_SECTIONS[2],
}


def build_feedback_packet(triage: list[ClusterTriage], descriptions: Mapping[str, str],
                          exemplars_per_bucket: int) -> str:
    """Assemble the bucket-verdict packet sent with the prompt revision request."""
    if not triage:
        raise PreconditionError("no triaged clusters to build feedback from")
    sections = {section: [] for section in PROMPT_SECTIONS}
    for t in sorted(triage, key=lambda t: t.cluster_id):
        section = _BUCKET_SECTION[t.bucket]
        entry = [f"cluster {t.cluster_id} (relevance {t.score:.2f}, {t.bucket.value})"]
        exemplars = [sid for sid in t.sampled_ids if sid in descriptions]
        for sid in exemplars[:exemplars_per_bucket]:
            entry.append(f"  - {descriptions[sid]}")
        sections[section].append("\n".join(entry))
    lines = []
    for section in PROMPT_SECTIONS:
        lines.append(f"## {section}")
        lines.extend(sections[section] or ["(none)"])
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def build_prompt_feedback(triage: list[ClusterTriage], descriptions: Mapping[str, str],
                          exemplars_per_bucket: int, initial_prompt: str,
                          revise: Callable[[str, str], str]) -> tuple[str, str, bool]:
    """Request a revised description prompt from the VLM.

    Returns (revised_prompt, packet, degraded). On VLM failure the initial
    prompt is returned unchanged with degraded=True so the pipeline never
    stalls on prompt optimization.
    """
    packet = build_feedback_packet(triage, descriptions, exemplars_per_bucket)
    try:
        revised = revise(initial_prompt, packet)
        return revised, packet, False
    except Exception:
        logger.warning("prompt revision failed; keeping the current prompt", exc_info=True)
        return initial_prompt, packet, True
