"""Curation quality metrics against a human-verified reference.

Conventions: macro averages are unweighted class means; a class whose
precision/recall/F1 denominator is zero contributes 0 to the macro (this
choice changes headline numbers, so it is fixed here rather than left to
the caller). NRR/CDRR are undefined (None) when the reference has no
noisy / no clean samples, never reported as 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .errors import PreconditionError


@dataclass(frozen=True)
class EvalReference:
    """Ground truth for evaluation.

    clean_flags marks which samples a human verified as clean (True) vs
    noisy (False); its domain must be a subset of truth's.
    """

    truth: dict[str, str]
    clean_flags: dict[str, bool] = field(default_factory=dict)
    semantic_truth: dict[str, tuple[str, frozenset[str]]] | None = None

    def __post_init__(self) -> None:
        extra = set(self.clean_flags) - set(self.truth)
        if extra:
            raise PreconditionError(
                f"clean_flags cover {len(extra)} samples missing from truth"
            )


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class PrfReport:
    per_class: dict[str, ClassScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float


def macro_prf(predictions: dict[str, str], truth: dict[str, str],
              classes: list[str] | None = None) -> PrfReport:
    """Per-class and macro precision/recall/F1 from TP/FP/FN counts.

    Only samples present in `predictions` are scored; their ids must all
    appear in `truth`. When `classes` is not given, the class set is the
    sorted union of predicted and true labels over the scored samples.
    """
    missing = set(predictions) - set(truth)
    if missing:
        raise PreconditionError(f"{len(missing)} predicted samples missing from truth")
    if classes is None:
        observed = set(predictions.values()) | {truth[s] for s in predictions}
        classes = sorted(observed)
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    for sid, pred in predictions.items():
        actual = truth[sid]
        if pred == actual:
            if pred in tp:
                tp[pred] += 1
        else:
            if pred in fp:
                fp[pred] += 1
            if actual in fn:
                fn[actual] += 1
    per_class = {}
    for c in classes:
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[c] = ClassScores(precision=p, recall=r, f1=f1, tp=tp[c], fp=fp[c], fn=fn[c])
    n = len(classes)
    if n == 0:
        return PrfReport(per_class={}, macro_precision=0.0, macro_recall=0.0, macro_f1=0.0)
    return PrfReport(
        per_class=per_class,
        macro_precision=sum(s.precision for s in per_class.values()) / n,
        macro_recall=sum(s.recall for s in per_class.values()) / n,
        macro_f1=sum(s.f1 for s in per_class.values()) / n,
    )


def nrr_cdrr(final_statuses: dict[str, str],
             reference: EvalReference) -> tuple[float | None, float | None]:
    """Noise removal rate and clean data retention rate.

    `final_statuses` maps sample id to "committed" or "discarded". NRR is
    the fraction of human-verified noisy samples that were discarded;
    CDRR the fraction of human-verified clean samples committed.
    """
    if not reference.clean_flags:
        raise PreconditionError("reference has no clean/noisy flags")
    noisy = [s for s, clean in reference.clean_flags.items() if not clean]
    clean = [s for s, clean in reference.clean_flags.items() if clean]
    nrr = None
    cdrr = None
    if noisy:
        removed = sum(1 for s in noisy if final_statuses.get(s) == "discarded")
        nrr = removed / len(noisy)
    if clean:
        kept = sum(1 for s in clean if final_statuses.get(s) == "committed")
        cdrr = kept / len(clean)
    return nrr, cdrr


def normalize_term(term: str, synonyms: dict[str, str]) -> str:
    key = " ".join(term.strip().lower().split())
    return synonyms.get(key, key)


# Normalizations from the mushroom-attribute evaluation protocol.
DEFAULT_SYNONYMS = {
    "whitish": "white",
    "cap": "umbrella-shaped",
}


def perfect_match(semantic: dict[str, tuple[str, frozenset[str] | set[str]]],
                  semantic_truth: dict[str, tuple[str, frozenset[str] | set[str]]],
                  synonyms: dict[str, str] | None = None) -> float:
    """Fraction of samples where category and full trace set match exactly.

    Both sides are passed through synonym normalization before comparison.
    Only samples present in both maps are evaluated.
    """
    syn = DEFAULT_SYNONYMS if synonyms is None else synonyms
    shared = sorted(set(semantic) & set(semantic_truth))
    if not shared:
        return 0.0
    hits = 0
    for sid in shared:
        cat_a, traces_a = semantic[sid]
        cat_b, traces_b = semantic_truth[sid]
        norm_a = (normalize_term(cat_a, syn), {normalize_term(t, syn) for t in traces_a})
        norm_b = (normalize_term(cat_b, syn), {normalize_term(t, syn) for t in traces_b})
        if norm_a == norm_b:
            hits += 1
    return hits / len(shared)


def confusion_matrix(predictions: dict[str, str], truth: dict[str, str],
                     classes: list[str]) -> list[list[int]]:
    """Rows = true class, columns = predicted class."""
    idx = {c: i for i, c in enumerate(classes)}
    mat = [[0] * len(classes) for _ in classes]
    for sid, pred in predictions.items():
        actual = truth.get(sid)
        if actual in idx and pred in idx:
            mat[idx[actual]][idx[pred]] += 1
    return mat


def confusion_csv(mat: list[list[int]], classes: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred"] + classes)
    for c, row in zip(classes, mat):
        writer.writerow([c] + row)
    return buf.getvalue()


def report_json(prf: PrfReport, nrr: float | None, cdrr: float | None,
                perfect: float | None = None) -> str:
    doc = {
        "macro": {
            "precision": prf.macro_precision,
            "recall": prf.macro_recall,
            "f1": prf.macro_f1,
        },
        "per_class": {
            c: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                "tp": s.tp, "fp": s.fp, "fn": s.fn}
            for c, s in sorted(prf.per_class.items())
        },
        "nrr": nrr,
        "cdrr": cdrr,
    }
    if perfect is not None:
        doc["perfect_match"] = perfect
    return json.dumps(doc, indent=2, sort_keys=False)


def report_table(prf: PrfReport, nrr: float | None, cdrr: float | None) -> str:
    lines = [f"{'class':<10} {'precision':>9} {'recall':>9} {'f1':>9}"]
    for c, s in sorted(prf.per_class.items()):
        lines.append(f"{c:<10} {s.precision:>9.4f} {s.recall:>9.4f} {s.f1:>9.4f}")
    lines.append(
        f"{'macro':<10} {prf.macro_precision:>9.4f} {prf.macro_recall:>9.4f} "
        f"{prf.macro_f1:>9.4f}"
    )
    lines.append(f"NRR:  {'n/a' if nrr is None else f'{nrr:.4f}'}")
    lines.append(f"CDRR: {'n/a' if cdrr is None else f'{cdrr:.4f}'}")
    return "\n".join(lines)
