"""Synthetic fixtures for exercising the pipeline without a model sidecar.

Generates a project whose per-expert embeddings come from a Gaussian
mixture on the unit sphere: each target class gets a random unit center,
class samples are `normalize(center + sigma * noise)` with sigma chosen so
the expected within-class cosine is controlled by `spread` independent of
the embedding dimension, and off-topic samples are uniform on the sphere.
Ground truth is returned alongside so tests can play oracle annotator.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import orchestrator
from .config import PipelineConfig
from .manifest import append_annotations, read_jsonl
from .project import Project
from .rng import derive_seed, generator
from .types import (AnnotationReason, AnnotationRecord, ClassDef, ExpertKind, Sample,
                    Stage, Status)
from .vectors import EmbeddingStore

EXPERT_KINDS = (ExpertKind.CLIP_IMAGE, ExpertKind.DINOV2, ExpertKind.BEIT)

NOISE_CLASS = "N"

_CLASS_COLORS = {
    "A": (220, 60, 60), "B": (60, 200, 60), "C": (70, 70, 220), NOISE_CLASS: (128, 128, 128),
}


@dataclass
class SyntheticDataset:
    project: Project
    truth: dict[str, str]  # sample id -> class id (noise class for noise)
    clean_flags: dict[str, bool]
    seed_ids: list[str]

    @property
    def noise_class(self) -> str:
        return self.project.config.noise_class


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _class_sample(rng: np.random.Generator, center: np.ndarray, spread: float) -> np.ndarray:
    dim = center.shape[0]
    sigma = np.sqrt(spread / dim)
    v = center + sigma * rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def _overlapped_centers(rng: np.random.Generator, n: int, dim: int,
                        overlap: float) -> tuple[np.ndarray, list[np.ndarray]]:
    shared = _unit(rng, dim)
    centers = []
    for _ in range(n):
        own = _unit(rng, dim)
        mixed = overlap * shared + (1.0 - overlap) * own
        centers.append(mixed / np.linalg.norm(mixed))
    return shared, centers


def _tiny_png(color: tuple[int, int, int], side: int = 32, salt: int = 0) -> bytes:
    img = Image.new("RGB", (side, side), color)
    # unique corner pixel so identical-class images still get distinct ids
    img.putpixel((side - 1, side - 1), (salt % 256, (salt // 256) % 256, 255))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def make_synthetic_project(root: Path, seed: int, n_per_class: int = 140,
                           noise_fraction: float = 0.3, spread: float = 0.3,
                           center_overlap: float = 0.0, noise_near_topic: float = 0.0,
                           noise_tight: bool = False, seeds_per_class: int = 8,
                           config: PipelineConfig | None = None,
                           write_images: bool = False,
                           write_embeddings: bool = True,
                           with_descriptions: bool = True,
                           start_status: Status = Status.REFINED) -> SyntheticDataset:
    """Create an initialized project populated with synthetic embeddings.

    The class labels are A/B/C plus the noise class N; `noise_fraction` of
    the total ends up as noise samples labeled N in the returned truth map.
    Noise is uniform on the sphere by default; `noise_near_topic` > 0 pulls
    each noise sample toward one randomly chosen class center, imitating
    topic-adjacent web junk that is much harder to reject than random
    imagery, and `noise_tight` instead draws noise from its own compact
    center so the experts never disagree about it.
    """
    classes = ("A", "B", "C")
    if config is None:
        config = PipelineConfig(rng_seed=seed)
    config.classes = tuple(
        [ClassDef(c, f"part {c}") for c in classes] + [ClassDef(NOISE_CLASS, "off-topic")]
    )
    config.noise_class = NOISE_CLASS
    project = Project.init(Path(root), config)

    n_target = n_per_class * len(classes)
    n_noise = int(round(n_target * noise_fraction / (1.0 - noise_fraction)))
    rng = generator(seed, "synthetic")

    plan: list[str] = [c for c in classes for _ in range(n_per_class)]
    plan += [NOISE_CLASS] * n_noise

    stores = {kind: EmbeddingStore(expert=kind, vectors={}) for kind in EXPERT_KINDS}
    centers = {}
    noise_centers = {}
    for kind in EXPERT_KINDS:
        _, centers[kind] = _overlapped_centers(rng, len(classes), kind.dim,
                                               center_overlap)
        noise_centers[kind] = _unit(rng, kind.dim)
    samples = []
    truth: dict[str, str] = {}
    by_class: dict[str, list[str]] = {c: [] for c in plan}
    for i, cls in enumerate(plan):
        sid = f"{derive_sample_tag(seed, i):032x}"
        truth[sid] = cls
        by_class.setdefault(cls, []).append(sid)
        near_class = int(rng.integers(0, len(classes)))
        for kind in EXPERT_KINDS:
            if cls == NOISE_CLASS and noise_tight:
                vec = _class_sample(rng, noise_centers[kind], spread)
            elif cls == NOISE_CLASS:
                raw = (noise_near_topic * centers[kind][near_class]
                       + (1.0 - noise_near_topic) * _unit(rng, kind.dim))
                vec = (raw / np.linalg.norm(raw)).astype(np.float32)
            else:
                vec = _class_sample(rng, centers[kind][classes.index(cls)], spread)
            stores[kind].vectors[sid] = vec
        image_rel = f"images/{sid}.png"
        if write_images:
            (project.root / image_rel).write_bytes(_tiny_png(_CLASS_COLORS[cls], salt=i))
        description = f"synthetic sample of class {cls}" if with_descriptions else None
        samples.append(Sample(id=sid, image_path=image_rel, keyword=f"part {cls}",
                              description=description, status=start_status,
                              source_lang="en"))

    project.save_samples(samples)
    if write_embeddings:
        for kind in EXPERT_KINDS:
            project.save_store(stores[kind])

    seed_ids: list[str] = []
    records = []
    for cls in list(classes) + [NOISE_CLASS]:
        members = sorted(by_class.get(cls, []))
        if not members:
            continue
        picks = rng.choice(len(members), size=min(seeds_per_class, len(members)),
                           replace=False)
        for i in sorted(picks):
            sid = members[i]
            seed_ids.append(sid)
            records.append(AnnotationRecord(sample_id=sid, label=cls, annotator="oracle",
                                            round=0, reason=AnnotationReason.SEED))
    append_annotations(project.annotations_path, records)

    clean_flags = {sid: cls != NOISE_CLASS for sid, cls in truth.items()}
    return SyntheticDataset(project=project, truth=truth, clean_flags=clean_flags,
                            seed_ids=seed_ids)


def derive_sample_tag(seed: int, index: int) -> int:
    """Stable 128-bit id material for synthetic sample `index`."""
    hi = derive_seed(seed, "sample-hi", str(index))
    lo = derive_seed(seed, "sample-lo", str(index))
    return (hi << 64) | lo


def resolve_pending_with_truth(dataset: SyntheticDataset, annotator: str = "oracle") -> int:
    """Oracle annotator: resolve every pending escalation with the true label."""
    pending = orchestrator.pending_escalations(dataset.project)
    rows = [
        {"sample_id": row["sample_id"], "label": dataset.truth[row["sample_id"]],
         "annotator": annotator}
        for _, row in pending
    ]
    if not rows:
        return 0
    return orchestrator.ingest_escalation_resolutions(dataset.project, rows)


def run_distill_to_completion(dataset: SyntheticDataset, rounds: int) -> list[dict]:
    """Run `rounds` distill rounds with oracle resolutions in between.

    Returns the per-round decision summaries (accepted count, pool size).
    """
    summaries = []
    for _ in range(rounds):
        state = orchestrator.run_round(dataset.project, Stage.DISTILL)
        rows = read_jsonl(dataset.project.round_dir(state.round) / "decisions.jsonl")
        summaries.append({
            "round": state.round,
            "pool": len(rows),
            "accepted": sum(1 for r in rows if r["outcome"] == "accepted"),
        })
        resolve_pending_with_truth(dataset)
        if dataset.project.coarse_labels_path.exists() and \
                dataset.project.step_done(state.round, "finalize"):
            break
    return summaries
