"""Region-evidence semantic relabeling.

The engine tiles each image into 3x3 and 4x4 pixel grids and asks the
proposer VLM which cells belong to the subject and which trace attributes
each cell shows. A validator VLM is then queried twice (whole image, then
subject + flagged crops) and the two verdicts are fused deterministically:
a trace survives if both verdicts agree on it, or if the local verdict
claims it and enough subject cells flag it. Category disagreements with the
upstream coarse label never overwrite it; they go to human review.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .errors import PreconditionError, ProtocolError

NONE_TRACE = "none"


@dataclass(frozen=True)
class RegionBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0 or self.w <= 0 or self.h <= 0:
            raise PreconditionError(f"degenerate region box {self}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


class Granularity(str, Enum):
    G3 = "3x3"
    G4 = "4x4"

    @property
    def size(self) -> int:
        return 3 if self is Granularity.G3 else 4

    @property
    def n_boxes(self) -> int:
        return self.size * self.size


GRANULARITIES = (Granularity.G3, Granularity.G4)


@dataclass(frozen=True)
class RegionGrid:
    granularity: Granularity
    boxes: tuple[RegionBox, ...]  # row-major


def make_grid(width: int, height: int, granularity: Granularity) -> RegionGrid:
    """Row-major g x g tiling; the last row/column absorb the remainder.

    The tiling is an exact partition of the image: cell interiors are
    disjoint and their union covers every pixel.
    """
    g = granularity.size
    if width < g or height < g:
        raise PreconditionError(f"image {width}x{height} is smaller than the {g}x{g} grid")
    cell_w = width // g
    cell_h = height // g
    boxes = []
    for row in range(g):
        for col in range(g):
            w = cell_w if col < g - 1 else width - cell_w * (g - 1)
            h = cell_h if row < g - 1 else height - cell_h * (g - 1)
            boxes.append(RegionBox(x=col * cell_w, y=row * cell_h, w=w, h=h))
    return RegionGrid(granularity=granularity, boxes=tuple(boxes))


@dataclass(frozen=True)
class ProposerOutput:
    """Subject cell sets and per-cell trace flags for both granularities."""

    subject_indices: dict[Granularity, frozenset[int]]
    flags: dict[Granularity, tuple[Mapping[str, bool], ...]]


def repair_none_exclusivity(flags: dict[str, bool]) -> tuple[dict[str, bool], bool]:
    """Clear a "none" flag that co-occurs with a real trace flag.

    Idempotent: repairing an already-repaired map is a no-op.
    """
    if flags.get(NONE_TRACE) and any(v for t, v in flags.items() if t != NONE_TRACE):
        fixed = dict(flags)
        fixed[NONE_TRACE] = False
        return fixed, True
    return dict(flags), False


def parse_proposer_response(raw: dict, traces: tuple[str, ...]) -> tuple[ProposerOutput, list[str]]:
    """Validate a raw proposer payload against the grid geometry and trace set.

    Returns the parsed output plus audit notes for any repairs applied.
    Out-of-range cell indices, unknown traces, or empty subject sets are
    protocol errors.

    Expected payload shape::

        {"3x3": {"subject": [0, 4], "flags": [{"rust": true, ...} x 9]},
         "4x4": {...}}
    """
    notes: list[str] = []
    subject_indices: dict[Granularity, frozenset[int]] = {}
    flags: dict[Granularity, tuple[dict[str, bool], ...]] = {}
    trace_set = set(traces)
    for gran in GRANULARITIES:
        body = raw.get(gran.value)
        if not isinstance(body, dict):
            raise ProtocolError(f"proposer response missing granularity {gran.value}")
        subject = body.get("subject")
        if not isinstance(subject, list) or not subject:
            raise ProtocolError(f"{gran.value}: subject cell list missing or empty")
        cells = set()
        for idx in subject:
            if not isinstance(idx, int) or not 0 <= idx < gran.n_boxes:
                raise ProtocolError(f"{gran.value}: subject cell index {idx!r} out of range")
            cells.add(idx)
        cell_flags = body.get("flags")
        if not isinstance(cell_flags, list) or len(cell_flags) != gran.n_boxes:
            raise ProtocolError(
                f"{gran.value}: expected flags for exactly {gran.n_boxes} cells"
            )
        parsed_cells = []
        for j, cell in enumerate(cell_flags):
            if not isinstance(cell, dict):
                raise ProtocolError(f"{gran.value}: cell {j} flags must be an object")
            unknown = set(cell) - trace_set
            if unknown:
                raise ProtocolError(f"{gran.value}: cell {j} has unknown traces {sorted(unknown)}")
            normalized = {t: bool(cell.get(t, False)) for t in traces}
            repaired, changed = repair_none_exclusivity(normalized)
            if changed:
                notes.append(f"{gran.value}: cleared 'none' on cell {j} (co-set with a trace)")
            parsed_cells.append(repaired)
        subject_indices[gran] = frozenset(cells)
        flags[gran] = tuple(parsed_cells)
    return ProposerOutput(subject_indices=subject_indices, flags=flags), notes


class Provenance(str, Enum):
    GLOBAL_ONLY = "global_only"
    REGION_CONFIRMED = "region_confirmed"
    REGION_OVERRIDDEN = "region_overridden"


@dataclass(frozen=True)
class SemanticLabel:
    sample_id: str
    category: str
    traces: frozenset[str]
    evidence: tuple[tuple[str, int, str], ...]  # (granularity, cell index, trace)
    provenance: Provenance


@dataclass(frozen=True)
class ValidatorVerdict:
    """One validator inference: a category plus a set of trace attributes."""

    category: str
    traces: frozenset[str]

    @staticmethod
    def from_payload(payload: dict, traces: tuple[str, ...]) -> "ValidatorVerdict":
        category = payload.get("category")
        if not isinstance(category, str) or not category:
            raise ProtocolError("validator response lacks a category")
        raw_traces = payload.get("traces")
        if not isinstance(raw_traces, list):
            raise ProtocolError("validator response lacks a trace list")
        unknown = set(raw_traces) - set(traces)
        if unknown:
            raise ProtocolError(f"validator response has unknown traces {sorted(unknown)}")
        cleaned = frozenset(t for t in raw_traces if t != NONE_TRACE)
        return ValidatorVerdict(category=category, traces=cleaned)


def region_support(proposer_out: ProposerOutput, trace: str) -> int:
    """Number of subject cells (both granularities) flagging `trace`."""
    count = 0
    for gran in GRANULARITIES:
        for j in proposer_out.subject_indices[gran]:
            if proposer_out.flags[gran][j].get(trace, False):
                count += 1
    return count


def fuse_verdicts(sample_id: str, coarse_label: str, global_verdict: ValidatorVerdict,
                  local_verdict: ValidatorVerdict, proposer_out: ProposerOutput,
                  traces: tuple[str, ...], support_min: int = 2,
                  ) -> tuple[SemanticLabel, bool]:
    """Deterministic fusion of the two validator verdicts with region evidence.

    A trace is admitted when the global and local verdicts agree on it, or
    when the local verdict claims it and at least `support_min` subject
    cells flag it. The category follows the local verdict only when it
    agrees with the coarse label; otherwise the coarse label stands and the
    sample is flagged for human review (second return value).
    """
    admitted: set[str] = set()
    overridden = False
    for t in traces:
        if t == NONE_TRACE:
            continue
        confirmed = t in global_verdict.traces and t in local_verdict.traces
        support = region_support(proposer_out, t)
        override = t in local_verdict.traces and support >= support_min
        if confirmed or override:
            admitted.add(t)
            if override and not confirmed:
                overridden = True
    needs_review = local_verdict.category != coarse_label
    if needs_review:
        category = coarse_label
        provenance = Provenance.GLOBAL_ONLY
    else:
        category = local_verdict.category
        provenance = Provenance.REGION_OVERRIDDEN if overridden else Provenance.REGION_CONFIRMED
    evidence = []
    for t in sorted(admitted):
        for gran in GRANULARITIES:
            for j in sorted(proposer_out.subject_indices[gran]):
                if proposer_out.flags[gran][j].get(t, False):
                    evidence.append((gran.value, j, t))
    return (
        SemanticLabel(
            sample_id=sample_id,
            category=category,
            traces=frozenset(admitted),
            evidence=tuple(evidence),
            provenance=provenance,
        ),
        needs_review,
    )


def semantic_label_row(label: SemanticLabel) -> dict:
    return {
        "sample_id": label.sample_id,
        "category": label.category,
        "traces": sorted(label.traces),
        "evidence": [list(e) for e in label.evidence],
        "provenance": label.provenance.value,
    }
