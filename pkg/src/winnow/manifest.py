"""JSONL persistence for manifests and annotation logs.

All writers are atomic (temp file + rename) and byte-deterministic for
identical inputs, so re-running a stage with unchanged data reproduces
identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Iterable
from pathlib import Path

from .errors import DataError, FormatError
from .types import AnnotationReason, AnnotationRecord, Sample, Status


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_jsonl(rows: Iterable[dict]) -> bytes:
    lines = [json.dumps(row, ensure_ascii=False) for row in rows]
    return ("".join(line + "\n" for line in lines)).encode("utf-8")


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    atomic_write_bytes(Path(path), dump_jsonl(rows))


def append_jsonl(path: Path, rows: Iterable[dict]) -> None:
    data = dump_jsonl(rows)
    with open(path, "ab") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


def read_jsonl(path: Path) -> list[dict]:
    path = Path(path)
    rows = []
    if not path.exists():
        return rows
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rows.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return rows


def _sample_row(sample: Sample) -> dict:
    # Field order is part of the manifest format; do not reorder.
    return {
        "id": sample.id,
        "image_path": sample.image_path,
        "keyword": sample.keyword,
        "description": sample.description,
        "status": sample.status.value,
        "source_lang": sample.source_lang,
    }


def persist_manifest(samples: list[Sample], path: Path) -> None:
    """Write the sample manifest as one JSON object per line."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FormatError(f"parent directory does not exist: {path.parent}")
    write_jsonl(path, (_sample_row(s) for s in samples))


def load_manifest(path: Path) -> list[Sample]:
    samples = []
    for row in read_jsonl(path):
        try:
            samples.append(
                Sample(
                    id=row["id"],
                    image_path=row["image_path"],
                    keyword=row["keyword"],
                    description=row.get("description"),
                    status=Status(row["status"]),
                    source_lang=row.get("source_lang", "en"),
                )
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad manifest row {row!r}: {exc}") from exc
    return samples


def annotation_row(rec: AnnotationRecord) -> dict:
    return {
        "sample_id": rec.sample_id,
        "label": rec.label,
        "annotator": rec.annotator,
        "round": rec.round,
        "reason": rec.reason.value,
    }


def load_annotations(path: Path) -> list[AnnotationRecord]:
    """Load the annotation log; (sample_id, round) pairs must be unique."""
    records = []
    seen: set[tuple[str, int]] = set()
    for row in read_jsonl(path):
        try:
            rec = AnnotationRecord(
                sample_id=row["sample_id"],
                label=row["label"],
                annotator=row["annotator"],
                round=int(row["round"]),
                reason=AnnotationReason(row["reason"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad annotation row {row!r}: {exc}") from exc
        key = (rec.sample_id, rec.round)
        if key in seen:
            raise DataError(f"duplicate annotation for sample {rec.sample_id} round {rec.round}")
        seen.add(key)
        records.append(rec)
    return records


def append_annotations(path: Path, records: list[AnnotationRecord]) -> None:
    existing = {(r.sample_id, r.round) for r in load_annotations(path)}
    for rec in records:
        if (rec.sample_id, rec.round) in existing:
            raise DataError(f"duplicate annotation for sample {rec.sample_id} round {rec.round}")
        existing.add((rec.sample_id, rec.round))
    append_jsonl(path, [annotation_row(r) for r in records])
