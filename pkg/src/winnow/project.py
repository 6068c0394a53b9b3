"""Project directory: layout, locking, and persisted pipeline state.

Layout under the project root::

    config.cfg                      key/value configuration
    manifest.jsonl                  sample manifest
    images/<id>.<ext>               ingested image bytes
    embeddings/<expert>.bin         binary embedding containers
    annotations.jsonl               append-only human label log
    prompts.json                    current description prompt + audit trail
    rounds/<n>/state.json           round state
    rounds/<n>/steps.json           idempotent step ledger
    rounds/<n>/*.jsonl              queue and decision files
    labels/coarse.jsonl             committed stage-2 labels
    labels/semantic.jsonl           stage-3 semantic labels

The manifest has a single writer at a time, enforced with an advisory file
lock; readers never need the lock.
"""

from __future__ import annotations

import json
from pathlib import Path

from filelock import FileLock

from .config import (DEFAULT_CONFIG_HEADER, PipelineConfig, config_hash, load_config,
                     render_config)
from .errors import PreconditionError
from .manifest import (atomic_write_bytes, load_annotations, load_manifest,
                       persist_manifest)
from .types import AnnotationRecord, RoundState, Sample, Status, transition
from .vectors import EmbeddingStore, ExpertKind, load_or_empty, save_embeddings

CONFIG_NAME = "config.cfg"


class Project:
    def __init__(self, root: Path, config: PipelineConfig):
        self.root = Path(root)
        self.config = config

    # ----- lifecycle -------------------------------------------------

    @classmethod
    def init(cls, root: Path, config: PipelineConfig | None = None) -> "Project":
        root = Path(root)
        if (root / CONFIG_NAME).exists():
            raise PreconditionError(f"project already initialized at {root}")
        config = config or PipelineConfig()
        config.validate()
        root.mkdir(parents=True, exist_ok=True)
        for sub in ("images", "embeddings", "rounds", "labels"):
            (root / sub).mkdir(exist_ok=True)
        (root / CONFIG_NAME).write_text(
            DEFAULT_CONFIG_HEADER + render_config(config), encoding="utf-8"
        )
        persist_manifest([], root / "manifest.jsonl")
        project = cls(root, config)
        project._write_prompts({"current": config.initial_prompt, "described": None,
                                "history": []})
        return project

    @classmethod
    def open(cls, root: Path) -> "Project":
        root = Path(root)
        cfg_path = root / CONFIG_NAME
        if not cfg_path.exists():
            raise PreconditionError(f"{root} is not an initialized project")
        return cls(root, load_config(cfg_path))

    def lock(self) -> FileLock:
        return FileLock(str(self.root / ".lock"))

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    # ----- samples ----------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"

    def load_samples(self) -> list[Sample]:
        return load_manifest(self.manifest_path)

    def save_samples(self, samples: list[Sample]) -> None:
        ordered = sorted(samples, key=lambda s: s.id)
        persist_manifest(ordered, self.manifest_path)

    def apply_transitions(self, moves: dict[str, Status]) -> list[Sample]:
        """Move samples along the lifecycle DAG and persist the manifest."""
        samples = self.load_samples()
        updated = [transition(s, moves[s.id]) if s.id in moves else s for s in samples]
        self.save_samples(updated)
        return updated

    def image_path(self, sample: Sample) -> Path:
        return self.root / sample.image_path

    # ----- embeddings ---------------------------------------------------

    def embeddings_path(self, expert: ExpertKind) -> Path:
        return self.root / "embeddings" / f"{expert.value}.bin"

    def load_store(self, expert: ExpertKind) -> EmbeddingStore:
        return load_or_empty(self.embeddings_path(expert), expert)

    def save_store(self, store: EmbeddingStore) -> None:
        save_embeddings(self.embeddings_path(store.expert), store)

    # ----- annotations ---------------------------------------------------

    @property
    def annotations_path(self) -> Path:
        return self.root / "annotations.jsonl"

    def load_annotations(self) -> list[AnnotationRecord]:
        return load_annotations(self.annotations_path)

    # ----- prompts ---------------------------------------------------------

    @property
    def prompts_path(self) -> Path:
        return self.root / "prompts.json"

    def load_prompts(self) -> dict:
        return json.loads(self.prompts_path.read_text(encoding="utf-8"))

    def _write_prompts(self, obj: dict) -> None:
        atomic_write_bytes(self.prompts_path,
                           json.dumps(obj, indent=2, ensure_ascii=False).encode("utf-8"))

    def update_prompts(self, **changes) -> dict:
        obj = self.load_prompts()
        obj.update(changes)
        self._write_prompts(obj)
        return obj

    # ----- rounds --------------------------------------------------------

    @property
    def rounds_dir(self) -> Path:
        return self.root / "rounds"

    def round_dir(self, round_no: int) -> Path:
        return self.rounds_dir / str(round_no)

    def list_rounds(self) -> list[int]:
        if not self.rounds_dir.is_dir():
            return []
        return sorted(int(p.name) for p in self.rounds_dir.iterdir()
                      if p.is_dir() and p.name.isdigit())

    def latest_round(self) -> int | None:
        rounds = self.list_rounds()
        return rounds[-1] if rounds else None

    def round_state(self, round_no: int) -> RoundState | None:
        path = self.round_dir(round_no) / "state.json"
        if not path.exists():
            return None
        return RoundState.from_json(json.loads(path.read_text(encoding="utf-8")))

    def write_round_state(self, state: RoundState) -> None:
        path = self.round_dir(state.round) / "state.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(path, json.dumps(state.to_json(), indent=2).encode("utf-8"))

    # ----- step ledger -----------------------------------------------------

    def completed_steps(self, round_no: int) -> dict[str, str]:
        path = self.round_dir(round_no) / "steps.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    def mark_step(self, round_no: int, step: str) -> None:
        """Record a completed step; re-runs with the same config skip it."""
        steps = self.completed_steps(round_no)
        steps[step] = self.config_hash
        path = self.round_dir(round_no) / "steps.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(path, json.dumps(steps, indent=2, sort_keys=True).encode("utf-8"))

    def step_done(self, round_no: int, step: str) -> bool:
        # A config change invalidates cached steps of the current round.
        return self.completed_steps(round_no).get(step) == self.config_hash

    # ----- labels ----------------------------------------------------------

    @property
    def coarse_labels_path(self) -> Path:
        return self.root / "labels" / "coarse.jsonl"

    @property
    def semantic_labels_path(self) -> Path:
        return self.root / "labels" / "semantic.jsonl"

    def final_statuses(self) -> dict[str, str]:
        """Committed/discarded view used by the evaluation metrics.

        Every sample that did not end up committed counts as removed.
        """
        return {
            s.id: ("committed" if s.status == Status.COMMITTED else "discarded")
            for s in self.load_samples()
        }
