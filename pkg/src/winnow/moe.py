"""Expert kNN voting over a three-space vector index.

Each expert holds a sub-index of (label, vector) pairs in its own embedding
space. Prediction retrieves exact top-K neighbors by cosine, converts the
similarities to softmax weights at temperature T, and votes per class; the
three expert verdicts are combined by majority with the CLIP expert taking
precedence on three-way conflicts. A dual-confidence gate (topic confidence
= mean neighbor similarity, label confidence = cosine to the predicted
class mean, averaged over experts) decides accept vs non-target, and the
uncertainty sampler routes low-alignment and boundary samples to humans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import IndexBuildError, PreconditionError
from .rng import generator
from .types import AnnotationReason, AnnotationRecord, ExpertKind

__all__ = [
    "MoeExpert",
    "SubIndex",
    "ExpertIndex",
    "ExpertVerdict",
    "Outcome",
    "Decision",
    "EscalationReason",
    "EscalationItem",
    "build_index",
    "extend_index",
    "expert_predict",
    "ensemble_vote",
    "label_confidence",
    "alignment_score",
    "alignment_matrix",
    "decide",
    "sample_low_fas",
    "boundary_candidates",
    "evaluate_pool",
    "MixtureOfExpertsClassifier",
]


class MoeExpert(str, Enum):
    """The expert ensemble; declaration order fixes voting precedence."""

    CLIP = "clip"
    DINOV2 = "dinov2"
    BEIT = "beit"

    @property
    def embedding_kind(self) -> ExpertKind:
        return _EMBEDDING_KINDS[self]


_EMBEDDING_KINDS = {
    MoeExpert.CLIP: ExpertKind.CLIP_IMAGE,
    MoeExpert.DINOV2: ExpertKind.DINOV2,
    MoeExpert.BEIT: ExpertKind.BEIT,
}

EXPERT_ORDER = (MoeExpert.CLIP, MoeExpert.DINOV2, MoeExpert.BEIT)


@dataclass(frozen=True)
class SubIndex:
    """One expert's (label, vector) entries plus per-class mean vectors."""

    expert: MoeExpert
    entry_ids: tuple[str, ...]
    entry_labels: tuple[str, ...]
    matrix: np.ndarray  # (n, d) float32, unit rows
    class_means: dict[str, np.ndarray]  # unit float32

    def __len__(self) -> int:
        return len(self.entry_ids)


def _compute_class_means(labels: tuple[str, ...], matrix: np.ndarray) -> dict[str, np.ndarray]:
    means: dict[str, np.ndarray] = {}
    arr = np.asarray(labels)
    for c in sorted(set(labels)):
        rows = matrix[arr == c].astype(np.float64)
        mean = rows.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise IndexBuildError(f"class {c!r} mean vector is zero")
        out = (mean / norm).astype(np.float32)
        out.setflags(write=False)
        means[c] = out
    return means


def _make_sub_index(expert: MoeExpert, entry_ids: tuple[str, ...],
                    entry_labels: tuple[str, ...], matrix: np.ndarray) -> SubIndex:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    matrix.setflags(write=False)
    return SubIndex(
        expert=expert,
        entry_ids=entry_ids,
        entry_labels=entry_labels,
        matrix=matrix,
        class_means=_compute_class_means(entry_labels, matrix),
    )


@dataclass(frozen=True)
class ExpertIndex:
    """The full three-expert index plus the records it was built from."""

    subs: dict[MoeExpert, SubIndex]
    class_order: tuple[str, ...]
    records: tuple[AnnotationRecord, ...]

    def __len__(self) -> int:
        return len(self.subs[MoeExpert.CLIP])


def _dedupe_latest(annotations: list[AnnotationRecord]) -> list[AnnotationRecord]:
    # Later rounds supersede earlier annotations of the same sample.
    latest: dict[str, AnnotationRecord] = {}
    for rec in annotations:
        cur = latest.get(rec.sample_id)
        if cur is None or rec.round > cur.round:
            latest[rec.sample_id] = rec
    return [latest[sid] for sid in sorted(latest)]


def build_index(annotations: list[AnnotationRecord],
                embeddings: Mapping[MoeExpert, Mapping[str, np.ndarray]],
                class_order: tuple[str, ...]) -> ExpertIndex:
    """Build the three sub-indices from annotated reference samples.

    Every class in `class_order` needs at least one exemplar and every
    annotated sample needs vectors in all three expert spaces.
    """
    records = _dedupe_latest(annotations)
    if not records:
        raise IndexBuildError("cannot build an index from zero annotations")
    labels = {rec.label for rec in records}
    unknown = labels - set(class_order)
    if unknown:
        raise IndexBuildError(f"annotations carry labels outside the label space: {sorted(unknown)}")
    missing = [c for c in class_order if c not in labels]
    if missing:
        raise IndexBuildError(f"no exemplars for class(es): {missing}")
    entry_ids = tuple(rec.sample_id for rec in records)
    entry_labels = tuple(rec.label for rec in records)
    subs = {}
    for expert in EXPERT_ORDER:
        store = embeddings[expert]
        rows = []
        for rec in records:
            vec = store.get(rec.sample_id) if hasattr(store, "get") else store[rec.sample_id]
            if vec is None:
                raise IndexBuildError(
                    f"sample {rec.sample_id} has no {expert.value} embedding"
                )
            rows.append(vec)
        subs[expert] = _make_sub_index(expert, entry_ids, entry_labels, np.vstack(rows))
    return ExpertIndex(subs=subs, class_order=tuple(class_order), records=tuple(records))


def extend_index(index: ExpertIndex, resolutions: list[AnnotationRecord],
                 embeddings: Mapping[MoeExpert, Mapping[str, np.ndarray]]) -> ExpertIndex:
    """Append resolved samples to every sub-index and recompute class means.

    A resolution for a sample already present replaces its entry (the human
    label supersedes). Appending then recomputing is equivalent to a fresh
    build over the union of records.
    """
    if not resolutions:
        return index
    merged = _dedupe_latest(list(index.records) + list(resolutions))
    new_ids = {r.sample_id for r in resolutions}
    by_id = {rec.sample_id: rec for rec in merged}
    # Preserve existing entry order; append genuinely new samples at the end.
    kept_ids = [sid for sid in index.subs[MoeExpert.CLIP].entry_ids]
    appended = sorted(sid for sid in new_ids if sid not in set(kept_ids))
    order = kept_ids + appended
    entry_ids = tuple(order)
    entry_labels = tuple(by_id[sid].label for sid in order)
    subs = {}
    for expert in EXPERT_ORDER:
        old = index.subs[expert]
        store = embeddings[expert]
        rows = [old.matrix[i] for i in range(len(old))]
        for sid in appended:
            vec = store.get(sid) if hasattr(store, "get") else store[sid]
            if vec is None:
                raise IndexBuildError(f"sample {sid} has no {expert.value} embedding")
            rows.append(np.asarray(vec, dtype=np.float32))
        subs[expert] = _make_sub_index(expert, entry_ids, entry_labels, np.vstack(rows))
    return ExpertIndex(subs=subs, class_order=index.class_order, records=tuple(merged))


@dataclass(frozen=True)
class ExpertVerdict:
    expert: MoeExpert
    neighbors: tuple[tuple[float, str], ...]  # (similarity, label), descending
    predicted: str
    topic_conf: float


def _softmax_vote(similarities: np.ndarray, labels: list[str], temperature: float,
                  class_order: tuple[str, ...]) -> str:
    scaled = similarities / temperature
    w = np.exp(scaled - scaled.max())
    w /= w.sum()
    scores: dict[str, float] = {}
    for weight, label in zip(w, labels):
        scores[label] = scores.get(label, 0.0) + float(weight)
    best = max(scores.values())
    winners = [c for c, s in scores.items() if s == best]
    return min(winners, key=class_order.index)


def expert_verdicts_batch(queries: np.ndarray, sub: SubIndex, k: int, temperature: float,
                          class_order: tuple[str, ...]) -> list[ExpertVerdict]:
    """Exact top-K retrieval + softmax vote for a batch of query rows."""
    if k < 1:
        raise PreconditionError("k must be >= 1")
    if temperature <= 0:
        raise PreconditionError("temperature must be > 0")
    if len(sub) == 0:
        raise PreconditionError(f"{sub.expert.value} sub-index is empty")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    # float32 storage can push unit-vector dots a few 1e-9 past 1; clamp to
    # keep similarities inside the documented [-1, 1] range
    sims = np.clip(q @ sub.matrix.astype(np.float64).T, -1.0, 1.0)  # (N, n)
    kk = min(k, len(sub))
    # Stable sort so similarity ties resolve to the lowest entry index.
    order = np.argsort(-sims, axis=1, kind="stable")[:, :kk]
    verdicts = []
    for i in range(q.shape[0]):
        idx = order[i]
        topk = sims[i, idx]
        labels = [sub.entry_labels[j] for j in idx]
        predicted = _softmax_vote(topk, labels, temperature, class_order)
        verdicts.append(
            ExpertVerdict(
                expert=sub.expert,
                neighbors=tuple((float(s), l) for s, l in zip(topk, labels)),
                predicted=predicted,
                topic_conf=float(topk.mean()),
            )
        )
    return verdicts


def expert_predict(query: np.ndarray, sub: SubIndex, k: int, temperature: float,
                   class_order: tuple[str, ...]) -> ExpertVerdict:
    return expert_verdicts_batch(query[None, :], sub, k, temperature, class_order)[0]


def ensemble_vote(verdicts: Mapping[MoeExpert, ExpertVerdict]) -> tuple[str, bool]:
    """Majority over the three experts; CLIP wins three-way conflicts."""
    if set(verdicts) != set(EXPERT_ORDER):
        raise PreconditionError("ensemble_vote needs exactly one verdict per expert")
    preds = [verdicts[e].predicted for e in EXPERT_ORDER]
    for candidate in preds:
        if preds.count(candidate) >= 2:
            return candidate, False
    return verdicts[MoeExpert.CLIP].predicted, True


def label_confidence(queries: Mapping[MoeExpert, np.ndarray], label: str,
                     index: ExpertIndex) -> tuple[dict[MoeExpert, float], float]:
    """Cosine to the class-mean of `label` per expert, and the expert mean."""
    per_expert = {}
    for expert in EXPERT_ORDER:
        mean = index.subs[expert].class_means.get(label)
        if mean is None:
            raise PreconditionError(f"class {label!r} has no mean in {expert.value} sub-index")
        q = np.asarray(queries[expert], dtype=np.float64)
        per_expert[expert] = float(np.clip(q @ mean.astype(np.float64), -1.0, 1.0))
    avg = sum(per_expert.values()) / len(per_expert)
    return per_expert, avg


def alignment_score(queries: Mapping[MoeExpert, np.ndarray], class_id: str,
                    index: ExpertIndex) -> float:
    """Expert-averaged cosine between the query and one class's mean vector."""
    _, avg = label_confidence(queries, class_id, index)
    return avg


def alignment_matrix(queries: Mapping[MoeExpert, np.ndarray], index: ExpertIndex) -> np.ndarray:
    """(N, C) expert-averaged alignment of query rows to every class mean.

    Columns follow `index.class_order`.
    """
    total = None
    for expert in EXPERT_ORDER:
        sub = index.subs[expert]
        means = np.vstack([sub.class_means[c] for c in index.class_order]).astype(np.float64)
        q = np.atleast_2d(np.asarray(queries[expert], dtype=np.float64))
        part = np.clip(q @ means.T, -1.0, 1.0)
        total = part if total is None else total + part
    return total / len(EXPERT_ORDER)


class Outcome(str, Enum):
    ACCEPTED = "accepted"
    NON_TARGET = "non_target"


@dataclass(frozen=True)
class Decision:
    sample_id: str
    label: str
    conflict: bool
    topic_conf: float
    label_conf: float
    outcome: Outcome


def decide(sample_id: str, verdicts: Mapping[MoeExpert, ExpertVerdict], label_conf: float,
           topic_threshold: float, label_threshold: float,
           topic_expert: MoeExpert = MoeExpert.CLIP) -> Decision:
    """Dual-confidence gate: accept iff both thresholds are met (inclusive)."""
    label, conflict = ensemble_vote(verdicts)
    topic_conf = verdicts[topic_expert].topic_conf
    accepted = topic_conf >= topic_threshold and label_conf >= label_threshold
    return Decision(
        sample_id=sample_id,
        label=label,
        conflict=conflict,
        topic_conf=topic_conf,
        label_conf=label_conf,
        outcome=Outcome.ACCEPTED if accepted else Outcome.NON_TARGET,
    )


class EscalationReason(str, Enum):
    CONFLICT = "conflict"
    LOW_FAS = "low_fas"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class EscalationItem:
    sample_id: str
    reason: EscalationReason
    attributed_class: str | None
    score: float
    round: int
    status: str = "pending"
    resolution: str | None = None

    def resolve(self, label: str) -> "EscalationItem":
        return replace(self, status="resolved", resolution=label)


def sample_low_fas(accepted: list[Decision], alpha: float, k_l: int, seed: int,
                   round_no: int) -> list[EscalationItem]:
    """Draw K_L samples from each class's bottom-alpha alignment pool.

    Pool size is ceil(alpha * class size), so any nonzero alpha yields a
    pool of at least one for a non-empty class.
    """
    if not 0 < alpha <= 1:
        raise PreconditionError("alpha must be in (0, 1]")
    if k_l < 0:
        raise PreconditionError("k_l must be >= 0")
    if k_l == 0 or not accepted:
        return []
    rng = generator(seed, "low_fas", str(round_no))
    by_class: dict[str, list[Decision]] = {}
    for dec in accepted:
        by_class.setdefault(dec.label, []).append(dec)
    items = []
    for label in sorted(by_class):
        ranked = sorted(by_class[label], key=lambda d: (d.label_conf, d.sample_id))
        pool = ranked[: math.ceil(alpha * len(ranked))]
        take = min(k_l, len(pool))
        chosen = rng.choice(len(pool), size=take, replace=False)
        for i in sorted(chosen):
            dec = pool[i]
            items.append(
                EscalationItem(
                    sample_id=dec.sample_id,
                    reason=EscalationReason.LOW_FAS,
                    attributed_class=dec.label,
                    score=dec.label_conf,
                    round=round_no,
                )
            )
    return items


def low_fas_pool(accepted: list[Decision], alpha: float) -> dict[str, list[str]]:
    """Per-class bottom-alpha pool membership (exposed for verification)."""
    by_class: dict[str, list[Decision]] = {}
    for dec in accepted:
        by_class.setdefault(dec.label, []).append(dec)
    pools = {}
    for label, decs in by_class.items():
        ranked = sorted(decs, key=lambda d: (d.label_conf, d.sample_id))
        pools[label] = [d.sample_id for d in ranked[: math.ceil(alpha * len(ranked))]]
    return pools


def boundary_candidates(non_targets: Mapping[str, Mapping[MoeExpert, np.ndarray]], k_h: int,
                        index: ExpertIndex, round_no: int) -> list[EscalationItem]:
    """Rank non-targets by their strongest class alignment; take the top K_H.

    Alignment is computed against every class including the noise class;
    ties on the argmax go to the earliest class in the label order, ties on
    the ranking go to the lexicographically smaller sample id.
    """
    if k_h < 0:
        raise PreconditionError("k_h must be >= 0")
    if k_h == 0 or not non_targets:
        return []
    scored = []
    for sid in sorted(non_targets):
        align = alignment_matrix(non_targets[sid], index)[0]
        best = float(align.max())
        attributed = index.class_order[int(np.flatnonzero(align == align.max())[0])]
        scored.append((best, sid, attributed))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        EscalationItem(
            sample_id=sid,
            reason=EscalationReason.BOUNDARY,
            attributed_class=attributed,
            score=best,
            round=round_no,
        )
        for best, sid, attributed in scored[:k_h]
    ]


def evaluate_pool(ids: list[str], queries: Mapping[MoeExpert, np.ndarray], index: ExpertIndex,
                  k: int, temperature: float, topic_threshold: float, label_threshold: float,
                  topic_expert: MoeExpert = MoeExpert.CLIP,
                  ) -> tuple[list[Decision], list[dict[MoeExpert, ExpertVerdict]]]:
    """Run the full expert vote + confidence gate over a pool.

    `queries[expert]` is an (N, d_expert) matrix whose rows follow `ids`.
    """
    per_expert = {
        expert: expert_verdicts_batch(queries[expert], index.subs[expert], k, temperature,
                                      index.class_order)
        for expert in EXPERT_ORDER
    }
    align = alignment_matrix(queries, index)
    col = {c: j for j, c in enumerate(index.class_order)}
    decisions = []
    verdicts_out = []
    for i, sid in enumerate(ids):
        verdicts = {expert: per_expert[expert][i] for expert in EXPERT_ORDER}
        label, _ = ensemble_vote(verdicts)
        label_conf = float(align[i, col[label]])
        decisions.append(
            decide(sid, verdicts, label_conf, topic_threshold, label_threshold, topic_expert)
        )
        verdicts_out.append(verdicts)
    return decisions, verdicts_out


class MixtureOfExpertsClassifier:
    """sklearn-style facade over the expert index and voting machinery.

    X is a mapping from expert name ("clip", "dinov2", "beit") to an
    (n_samples, d_expert) array; rows are L2-normalized on the way in.

    >>> clf = MixtureOfExpertsClassifier(n_neighbors=7).fit(X_train, y_train)
    >>> labels = clf.predict(X_test)
    """

    def __init__(self, n_neighbors: int = 7, temperature: float = 0.07,
                 topic_threshold: float = 0.65, label_threshold: float = 0.45,
                 topic_expert: str = "clip"):
        self.n_neighbors = n_neighbors
        self.temperature = temperature
        self.topic_threshold = topic_threshold
        self.label_threshold = label_threshold
        self.topic_expert = topic_expert

    def get_params(self, deep: bool = True) -> dict:
        return {
            "n_neighbors": self.n_neighbors,
            "temperature": self.temperature,
            "topic_threshold": self.topic_threshold,
            "label_threshold": self.label_threshold,
            "topic_expert": self.topic_expert,
        }

    def set_params(self, **params) -> "MixtureOfExpertsClassifier":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    @staticmethod
    def _normalize(X: Mapping[str, np.ndarray]) -> dict[MoeExpert, np.ndarray]:
        out = {}
        for expert in EXPERT_ORDER:
            key = expert.value if expert.value in X else expert
            arr = np.atleast_2d(np.asarray(X[key], dtype=np.float64))
            norms = np.linalg.norm(arr, axis=1, keepdims=True)
            if np.any(norms == 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{expert.value}: rows must be finite and nonzero")
            out[expert] = (arr / norms).astype(np.float32)
        return out

    def fit(self, X: Mapping[str, np.ndarray], y) -> "MixtureOfExpertsClassifier":
        queries = self._normalize(X)
        labels = [str(v) for v in np.asarray(y).ravel()]
        n = len(labels)
        for expert, arr in queries.items():
            if arr.shape[0] != n:
                raise ValueError(f"{expert.value}: {arr.shape[0]} rows != {n} labels")
        class_order = tuple(sorted(set(labels)))
        records = [
            AnnotationRecord(sample_id=f"{i:032x}", label=labels[i], annotator="fit",
                             round=0, reason=AnnotationReason.SEED)
            for i in range(n)
        ]
        embeddings = {
            expert: {f"{i:032x}": queries[expert][i] for i in range(n)}
            for expert in EXPERT_ORDER
        }
        self.index_ = build_index(records, embeddings, class_order)
        self.classes_ = np.asarray(class_order)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "index_"):
            raise PreconditionError("classifier is not fitted")

    def decision_details(self, X: Mapping[str, np.ndarray]) -> list[Decision]:
        self._check_fitted()
        queries = self._normalize(X)
        n = next(iter(queries.values())).shape[0]
        ids = [f"{i:032x}" for i in range(n)]
        decisions, _ = evaluate_pool(
            ids, queries, self.index_, self.n_neighbors, self.temperature,
            self.topic_threshold, self.label_threshold, MoeExpert(self.topic_expert),
        )
        return decisions

    def predict(self, X: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.asarray([d.label for d in self.decision_details(X)])
