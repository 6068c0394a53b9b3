"""Round state machine across the three pipeline stages.

Each invocation of :func:`run_round` executes (or resumes) one round of one
stage as a sequence of idempotent steps. Every step persists its output and
is recorded in the round's step ledger under the active config hash, so a
killed process resumes at the last persisted step and a config change
invalidates only the current round's cached steps.

Stage step sequences:

* filter:  describe -> embed -> score -> cluster -> triage_request
           [human triage labels] -> triage_apply -> prompt_feedback
* distill: integrate -> embed -> decide -> escalate [-> finalize]
* relabel: relabel (propose + validate + fuse per committed sample)
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import moe, revlm, trimodal
from .config import PipelineConfig
from .errors import PreconditionError, ProtocolError, SidecarError
from .manifest import append_annotations, append_jsonl, read_jsonl, write_jsonl
from .moe import EXPERT_ORDER, Decision, EscalationItem, EscalationReason, MoeExpert, Outcome
from .project import Project
from .rng import derive_seed
from .sidecar_client import SidecarClient
from .types import (AnnotationReason, AnnotationRecord, ExpertKind, RoundState, Sample,
                    Stage, Status, text_id)
from .vectors import EmbeddingStore

logger = logging.getLogger(__name__)

ACTIVE = (Status.RAW, Status.REFINED)


def _round_seed(cfg: PipelineConfig, stage: Stage, round_no: int) -> int:
    return derive_seed(cfg.rng_seed, stage.value, str(round_no))


@dataclass
class RoundContext:
    project: Project
    round_no: int
    stage: Stage
    client: object  # SidecarClient or a compatible test double
    force: bool = False

    @property
    def cfg(self) -> PipelineConfig:
        return self.project.config

    @property
    def dir(self):
        return self.project.round_dir(self.round_no)

    def done(self, step: str) -> bool:
        return self.project.step_done(self.round_no, step)

    def mark(self, step: str) -> None:
        self.project.mark_step(self.round_no, step)


def stage_rounds(project: Project, stage: Stage) -> list[int]:
    """Round numbers already allocated to a stage, in order."""
    out = []
    for n in project.list_rounds():
        state = project.round_state(n)
        if state is not None and state.stage == stage:
            out.append(n)
    return out


def _is_complete(project: Project, round_no: int) -> bool:
    return "complete" in project.completed_steps(round_no)


def distill_finalized(project: Project) -> bool:
    return any("finalize" in project.completed_steps(n)
               for n in stage_rounds(project, Stage.DISTILL))


def _unintegrated_escalations(project: Project) -> list[tuple[int, dict]]:
    """Escalation items not yet folded into the annotation log."""
    out = []
    for n in project.list_rounds():
        for row in read_jsonl(project.round_dir(n) / "escalations.jsonl"):
            if row.get("status") == "pending":
                out.append((n, row))
    return out


def pending_escalations(project: Project) -> list[tuple[int, dict]]:
    """Escalation items still waiting for a human resolution.

    An item with a submitted (but not yet integrated) resolution row no
    longer counts as pending.
    """
    pending = []
    resolved_by_round: dict[int, set[str]] = {}
    for n, row in _unintegrated_escalations(project):
        if n not in resolved_by_round:
            resolved_by_round[n] = {
                r["sample_id"]
                for r in read_jsonl(project.round_dir(n) / "resolutions.jsonl")
            }
        if row["sample_id"] not in resolved_by_round[n]:
            pending.append((n, row))
    return pending


def pending_triage(project: Project) -> tuple[int | None, list[dict]]:
    """The newest filter round still awaiting triage labels, with its requests."""
    for n in reversed(project.list_rounds()):
        state = project.round_state(n)
        if state is None or state.stage != Stage.FILTER:
            continue
        if _is_complete(project, n):
            return None, []
        requests = read_jsonl(project.round_dir(n) / "triage_requests.jsonl")
        if not requests:
            return None, []
        labeled = {row["sample_id"] for row in
                   read_jsonl(project.round_dir(n) / "triage_labels.jsonl")}
        remaining = [r for r in requests if r["sample_id"] not in labeled]
        return n, remaining
    return None, []


def run_round(project: Project, stage: Stage, client=None, force: bool = False) -> RoundState:
    """Execute or resume one round of `stage`; returns the resulting state."""
    cfg = project.config
    cfg.validate()
    if client is None:
        client = SidecarClient(cfg.sidecar_url)

    with project.lock():
        round_no = _allocate_round(project, stage, force)
        ctx = RoundContext(project=project, round_no=round_no, stage=stage,
                           client=client, force=force)
        state = RoundState(
            round=round_no, stage=stage, counts=_status_counts(project),
            config_hash=project.config_hash, rng_seed=_round_seed(cfg, stage, round_no),
        )
        project.write_round_state(state)
        if stage == Stage.FILTER:
            finished = _run_filter(ctx)
        elif stage == Stage.DISTILL:
            finished = _run_distill(ctx)
        else:
            finished = _run_relabel(ctx)
        if finished and not ctx.done("complete"):
            ctx.mark("complete")
        state = RoundState(
            round=round_no, stage=stage, counts=_status_counts(project),
            config_hash=project.config_hash, rng_seed=state.rng_seed,
        )
        project.write_round_state(state)
        return state


def _status_counts(project: Project) -> dict[str, int]:
    counts: dict[str, int] = {}
    for s in project.load_samples():
        counts[s.status.value] = counts.get(s.status.value, 0) + 1
    return counts


def _allocate_round(project: Project, stage: Stage, force: bool) -> int:
    latest = project.latest_round()
    if latest is not None and not _is_complete(project, latest):
        state = project.round_state(latest)
        if state is not None and state.stage == stage:
            return latest  # resume
        if not force:
            raise PreconditionError(
                f"round {latest} ({state.stage.value if state else '?'}) is still "
                f"in progress; finish it or pass force"
            )
        logger.warning("abandoning unfinished round %d under force", latest)
    if stage == Stage.DISTILL:
        if not project.load_annotations():
            raise PreconditionError("index empty: seed annotations required")
        if distill_finalized(project):
            raise PreconditionError("distill stage already finalized")
        pending = pending_escalations(project)
        if pending and not force:
            by_reason: dict[str, int] = {}
            for _, row in pending:
                by_reason[row["reason"]] = by_reason.get(row["reason"], 0) + 1
            raise PreconditionError(
                "unresolved escalations pending: "
                + ", ".join(f"{k}={v}" for k, v in sorted(by_reason.items()))
            )
        if pending:
            logger.warning("proceeding past %d unresolved escalations (force)", len(pending))
    # relabel rounds are re-runnable: each pass reprocesses every committed
    # sample and rewrites the semantic label file wholesale
    if stage != Stage.RELABEL:
        done_before = [n for n in stage_rounds(project, stage) if _is_complete(project, n)]
        cap = (project.config.max_rounds_filter if stage == Stage.FILTER
               else project.config.max_rounds_distill)
        if len(done_before) >= cap:
            raise PreconditionError(
                f"stage {stage.value} already ran its {cap} round(s); raise max_rounds "
                f"to continue"
            )
    return 0 if latest is None else latest + 1


# --------------------------------------------------------------------------
# filter stage
# --------------------------------------------------------------------------

def _run_filter(ctx: RoundContext) -> bool:
    project, cfg = ctx.project, ctx.cfg
    samples = project.load_samples()
    active_ids = [s.id for s in samples if s.status in ACTIVE]
    if not active_ids:
        raise PreconditionError("no raw or refined samples; ingest a crawl first")

    if not ctx.done("describe"):
        _step_describe(ctx)
        ctx.mark("describe")
    if not ctx.done("embed"):
        _step_embed_text_image(ctx)
        ctx.mark("embed")
    if not ctx.done("score"):
        _step_score_split(ctx)
        ctx.mark("score")
    if not ctx.done("cluster"):
        _step_cluster(ctx)
        ctx.mark("cluster")
    if not ctx.done("triage_request"):
        _step_triage_request(ctx)
        ctx.mark("triage_request")

    requests = read_jsonl(ctx.dir / "triage_requests.jsonl")
    labels = {row["sample_id"]: int(row["relevance"])
              for row in read_jsonl(ctx.dir / "triage_labels.jsonl")}
    missing = [r["sample_id"] for r in requests if r["sample_id"] not in labels]
    if missing:
        logger.info("round %d awaiting %d triage labels", ctx.round_no, len(missing))
        return False

    if not ctx.done("triage_apply"):
        _step_triage_apply(ctx, labels)
        ctx.mark("triage_apply")
    if not ctx.done("prompt_feedback"):
        _step_prompt_feedback(ctx)
        ctx.mark("prompt_feedback")
    return True


def _step_describe(ctx: RoundContext) -> None:
    project = ctx.project
    prompts = project.load_prompts()
    current = prompts["current"]
    current_id = text_id(current)
    refresh_all = prompts.get("described") != current_id
    samples = project.load_samples()
    changed = False
    out = []
    for s in samples:
        if s.status in ACTIVE and (s.description is None or refresh_all):
            data = project.image_path(s).read_bytes()
            desc = ctx.client.describe(data, current)
            out.append(Sample(id=s.id, image_path=s.image_path, keyword=s.keyword,
                              description=desc, status=s.status, source_lang=s.source_lang))
            changed = True
        else:
            out.append(s)
    if changed:
        project.save_samples(out)
    project.update_prompts(described=current_id)


def _step_embed_text_image(ctx: RoundContext) -> None:
    project = ctx.project
    samples = [s for s in project.load_samples() if s.status in ACTIVE]
    img_store = project.load_store(ExpertKind.CLIP_IMAGE)
    txt_store = project.load_store(ExpertKind.CLIP_TEXT)
    img_new = {}
    for s in samples:
        if s.id not in img_store:
            img_new[s.id] = ctx.client.embed_image(project.image_path(s).read_bytes(),
                                                   ExpertKind.CLIP_IMAGE)
    texts = {s.description for s in samples if s.description} | {s.keyword for s in samples}
    txt_new = {}
    for text in sorted(texts):
        key = text_id(text)
        if key not in txt_store:
            txt_new[key] = ctx.client.embed_text(text)
    if img_new:
        img_store.vectors.update(img_new)
        project.save_store(img_store)
    if txt_new:
        txt_store.vectors.update(txt_new)
        project.save_store(txt_store)


def _step_score_split(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    samples = [s for s in project.load_samples() if s.status in ACTIVE]
    img_store = project.load_store(ExpertKind.CLIP_IMAGE)
    txt_store = project.load_store(ExpertKind.CLIP_TEXT)
    scores = []
    for s in sorted(samples, key=lambda s: s.id):
        scores.append(trimodal.score_trimodal(
            s,
            img_store.as_embedding(s.id),
            txt_store.as_embedding(text_id(s.description)),
            txt_store.as_embedding(text_id(s.keyword)),
            cfg.weights,
        ))
    write_jsonl(ctx.dir / "scores.jsonl", [
        {"sample_id": sc.sample_id, "sim_img_desc": sc.sim_img_desc,
         "sim_desc_kw": sc.sim_desc_kw, "sim_img_kw": sc.sim_img_kw, "fused": sc.fused}
        for sc in scores
    ])
    high, low = trimodal.split_by_threshold(scores, cfg.similarity_threshold)
    # Only raw samples move on the split; the lifecycle DAG has no path
    # from refined back to low_sim.
    moves = {}
    for s in samples:
        if s.status == Status.RAW:
            moves[s.id] = Status.REFINED if s.id in high else Status.LOW_SIM
    if moves:
        project.apply_transitions(moves)


def _step_cluster(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    samples = [s for s in project.load_samples() if s.status == Status.REFINED]
    img_store = project.load_store(ExpertKind.CLIP_IMAGE)
    txt_store = project.load_store(ExpertKind.CLIP_TEXT)
    enhanced = [
        trimodal.build_enhanced_embedding(
            s, img_store.as_embedding(s.id),
            txt_store.as_embedding(text_id(s.description)),
        )
        for s in samples
    ]
    assignments = trimodal.cluster(
        enhanced,
        trimodal.ClusterParams(min_cluster_size=cfg.cluster_min_size,
                               min_samples=cfg.cluster_min_samples),
    )
    payload = {sid: assignments[sid] for sid in sorted(assignments)}
    (ctx.dir / "clusters.json").parent.mkdir(parents=True, exist_ok=True)
    (ctx.dir / "clusters.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _step_triage_request(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    assignments = json.loads((ctx.dir / "clusters.json").read_text(encoding="utf-8"))
    picked = trimodal.sample_for_triage(assignments, cfg.triage_per_cluster,
                                        cfg.rng_seed, ctx.round_no)
    by_id = {s.id: s for s in project.load_samples()}
    rows = []
    for cid in sorted(picked):
        for sid in picked[cid]:
            rows.append({"sample_id": sid, "cluster_id": cid,
                         "image_path": by_id[sid].image_path})
    write_jsonl(ctx.dir / "triage_requests.jsonl", rows)


def _step_triage_apply(ctx: RoundContext, labels: dict[str, int]) -> None:
    project, cfg = ctx.project, ctx.cfg
    assignments = json.loads((ctx.dir / "clusters.json").read_text(encoding="utf-8"))
    triage = trimodal.triage_clusters(assignments, labels, cfg.triage_per_cluster,
                                      cfg.rng_seed, ctx.round_no,
                                      cfg.triage_strong_min, cfg.triage_discard_max)
    write_jsonl(ctx.dir / "triage_result.jsonl", [
        {"cluster_id": t.cluster_id, "score": t.score, "bucket": t.bucket.value,
         "sampled_ids": list(t.sampled_ids), "size": len(t.member_ids)}
        for t in triage
    ])
    moves = {}
    for t in triage:
        if t.bucket == trimodal.TriageBucket.DISCARD:
            for sid in t.member_ids:
                moves[sid] = Status.DISCARDED
    if moves:
        project.apply_transitions(moves)


def _step_prompt_feedback(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    rows = read_jsonl(ctx.dir / "triage_result.jsonl")
    triage = [
        trimodal.ClusterTriage(
            cluster_id=row["cluster_id"], member_ids=(), sampled_ids=tuple(row["sampled_ids"]),
            score=row["score"], bucket=trimodal.TriageBucket(row["bucket"]),
        )
        for row in rows
    ]
    if not triage:
        return
    descriptions = {s.id: s.description for s in project.load_samples() if s.description}
    prompts = project.load_prompts()
    revised, packet, degraded = trimodal.build_prompt_feedback(
        triage, descriptions, cfg.prompt_exemplars_per_bucket, prompts["current"],
        ctx.client.revise_prompt,
    )
    (ctx.dir / "feedback_packet.txt").write_text(packet, encoding="utf-8")
    history = prompts.get("history", [])
    history.append({"round": ctx.round_no, "prompt": prompts["current"],
                    "degraded": degraded})
    project.update_prompts(current=revised, history=history)
    if degraded:
        logger.warning("round %d: prompt revision degraded; kept previous prompt",
                       ctx.round_no)


# --------------------------------------------------------------------------
# distill stage
# --------------------------------------------------------------------------

def _run_distill(ctx: RoundContext) -> bool:
    if not ctx.done("integrate"):
        _step_integrate(ctx)
        ctx.mark("integrate")
    if not ctx.done("embed"):
        _step_embed_experts(ctx)
        ctx.mark("embed")
    if not ctx.done("decide"):
        _step_decide(ctx)
        ctx.mark("decide")
    if not ctx.done("escalate"):
        _step_escalate(ctx)
        ctx.mark("escalate")
    if _stage_should_finalize(ctx) and not ctx.done("finalize"):
        _step_finalize(ctx)
        ctx.mark("finalize")
    return True


def _load_decisions(project: Project, round_no: int) -> dict[str, dict]:
    return {row["sample_id"]: row
            for row in read_jsonl(project.round_dir(round_no) / "decisions.jsonl")}


def _append_coarse(project: Project, rows: list[dict]) -> None:
    project.coarse_labels_path.parent.mkdir(parents=True, exist_ok=True)
    append_jsonl(project.coarse_labels_path, rows)


def _step_integrate(ctx: RoundContext) -> None:
    """Consume escalation resolutions: annotate, commit/discard, extend the log."""
    project = ctx.project
    noise = ctx.cfg.noise_class
    records: list[AnnotationRecord] = []
    moves: dict[str, Status] = {}
    coarse_rows: list[dict] = []
    for n in project.list_rounds():
        esc_path = project.round_dir(n) / "escalations.jsonl"
        items = read_jsonl(esc_path)
        if not items:
            continue
        resolutions = {row["sample_id"]: row
                       for row in read_jsonl(project.round_dir(n) / "resolutions.jsonl")}
        changed = False
        decisions = None
        for item in items:
            if item.get("status") != "pending":
                continue
            res = resolutions.get(item["sample_id"])
            if res is None:
                continue
            label = res["label"]
            item["status"] = "resolved"
            item["resolution"] = label
            changed = True
            records.append(AnnotationRecord(
                sample_id=item["sample_id"], label=label,
                annotator=res.get("annotator", "unknown"), round=ctx.round_no,
                reason=AnnotationReason(item["reason"]),
            ))
            if label == noise:
                moves[item["sample_id"]] = Status.DISCARDED
            else:
                moves[item["sample_id"]] = Status.COMMITTED
                if decisions is None:
                    decisions = _load_decisions(project, n)
                dec = decisions.get(item["sample_id"], {})
                coarse_rows.append({
                    "sample_id": item["sample_id"], "label": label,
                    "topic_conf": dec.get("topic_conf"), "label_conf": dec.get("label_conf"),
                    "round": ctx.round_no,
                })
        if changed:
            write_jsonl(esc_path, items)
    if records:
        append_annotations(project.annotations_path, records)
    if moves:
        project.apply_transitions(moves)
    if coarse_rows:
        _append_coarse(project, coarse_rows)


def _step_embed_experts(ctx: RoundContext) -> None:
    project = ctx.project
    samples = {s.id: s for s in project.load_samples()}
    needed = {rec.sample_id for rec in project.load_annotations()}
    needed |= {sid for sid, s in samples.items() if s.status == Status.REFINED}
    for kind in (ExpertKind.CLIP_IMAGE, ExpertKind.DINOV2, ExpertKind.BEIT):
        store = project.load_store(kind)
        new = {}
        for sid in sorted(needed):
            if sid in store or sid not in samples:
                continue
            new[sid] = ctx.client.embed_image(project.image_path(samples[sid]).read_bytes(),
                                              kind)
        if new:
            store.vectors.update(new)
            project.save_store(store)


def _expert_stores(project: Project) -> dict[MoeExpert, EmbeddingStore]:
    return {expert: project.load_store(expert.embedding_kind) for expert in EXPERT_ORDER}


def _build_index(ctx: RoundContext, stores: dict[MoeExpert, EmbeddingStore]) -> moe.ExpertIndex:
    annotations = ctx.project.load_annotations()
    if not annotations:
        raise PreconditionError("index empty: seed annotations required")
    return moe.build_index(annotations, {e: s.vectors for e, s in stores.items()},
                           ctx.cfg.label_space.class_ids)


def _pool_queries(pool_ids: list[str], stores: dict[MoeExpert, EmbeddingStore]):
    queries = {}
    for expert, store in stores.items():
        missing = [sid for sid in pool_ids if sid not in store]
        if missing:
            raise PreconditionError(
                f"{len(missing)} pool samples lack {expert.value} embeddings "
                f"(first: {missing[0]})"
            )
        queries[expert] = np.vstack([store[sid] for sid in pool_ids]) if pool_ids else \
            np.zeros((0, store.expert.dim), dtype="float32")
    return queries


def _step_decide(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    stores = _expert_stores(project)
    index = _build_index(ctx, stores)
    pool_ids = sorted(s.id for s in project.load_samples() if s.status == Status.REFINED)
    queries = _pool_queries(pool_ids, stores)
    decisions, _ = moe.evaluate_pool(
        pool_ids, queries, index, cfg.neighbors, cfg.temperature,
        cfg.topic_threshold, cfg.label_threshold, MoeExpert(cfg.topic_conf_expert),
    )
    write_jsonl(ctx.dir / "decisions.jsonl", [
        {"sample_id": d.sample_id, "label": d.label, "conflict": d.conflict,
         "topic_conf": d.topic_conf, "label_conf": d.label_conf,
         "outcome": d.outcome.value}
        for d in decisions
    ])


def _step_escalate(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    rows = read_jsonl(ctx.dir / "decisions.jsonl")
    decisions = [
        Decision(sample_id=r["sample_id"], label=r["label"], conflict=bool(r["conflict"]),
                 topic_conf=r["topic_conf"], label_conf=r["label_conf"],
                 outcome=Outcome(r["outcome"]))
        for r in rows
    ]
    conflicts = [d for d in decisions if d.conflict]
    accepted = [d for d in decisions if d.outcome == Outcome.ACCEPTED and not d.conflict]
    non_targets = [d for d in decisions if d.outcome == Outcome.NON_TARGET and not d.conflict]

    items: list[EscalationItem] = [
        EscalationItem(sample_id=d.sample_id, reason=EscalationReason.CONFLICT,
                       attributed_class=d.label, score=d.label_conf, round=ctx.round_no)
        for d in conflicts
    ]
    if cfg.low_fas_draws > 0 and accepted:
        items += moe.sample_low_fas(accepted, cfg.low_fas_fraction, cfg.low_fas_draws,
                                    cfg.rng_seed, ctx.round_no)
    if cfg.boundary_draws > 0 and non_targets:
        stores = _expert_stores(project)
        index = _build_index(ctx, stores)
        nt_queries = {
            d.sample_id: {e: stores[e][d.sample_id] for e in EXPERT_ORDER}
            for d in non_targets
        }
        items += moe.boundary_candidates(nt_queries, cfg.boundary_draws, index, ctx.round_no)

    items = _apply_budget(items, len(decisions), cfg.escalation_budget)
    write_jsonl(ctx.dir / "escalations.jsonl", [
        {"sample_id": i.sample_id, "reason": i.reason.value,
         "attributed_class": i.attributed_class, "score": i.score, "round": i.round,
         "status": i.status, "resolution": i.resolution}
        for i in items
    ])
    if items:
        project.apply_transitions({i.sample_id: Status.ESCALATED for i in items})


def _apply_budget(items: list[EscalationItem], pool_size: int,
                  budget: float | None) -> list[EscalationItem]:
    """Queue priority: conflicts, then boundary (strongest first), then
    low-alignment (weakest first)."""
    reason_rank = {EscalationReason.CONFLICT: 0, EscalationReason.BOUNDARY: 1,
                   EscalationReason.LOW_FAS: 2}

    def sort_key(i: EscalationItem):
        score = -i.score if i.reason == EscalationReason.BOUNDARY else i.score
        return (reason_rank[i.reason], score, i.sample_id)

    ordered = sorted(items, key=sort_key)
    if budget is None or pool_size == 0:
        return ordered
    cap = math.ceil(budget * pool_size)
    if len(ordered) > cap:
        logger.warning("escalation budget truncates queue from %d to %d items",
                       len(ordered), cap)
    return ordered[:cap]


def _stage_should_finalize(ctx: RoundContext) -> bool:
    cfg = ctx.cfg
    done = [n for n in stage_rounds(ctx.project, Stage.DISTILL)
            if _is_complete(ctx.project, n) or n == ctx.round_no]
    if len(done) >= cfg.max_rounds_distill:
        return True
    if cfg.plateau_epsilon <= 0 or len(done) < 3:
        return False
    counts = []
    for n in done[-3:]:
        rows = read_jsonl(ctx.project.round_dir(n) / "decisions.jsonl")
        counts.append((sum(1 for r in rows if r["outcome"] == "accepted"), len(rows)))
    deltas = []
    for (prev, _), (cur, pool) in zip(counts, counts[1:]):
        deltas.append(abs(cur - prev) / pool if pool else 0.0)
    return all(d < cfg.plateau_epsilon for d in deltas[-2:])


def _step_finalize(ctx: RoundContext) -> None:
    """Apply the final round's decisions: accept -> committed, rest discarded."""
    project, cfg = ctx.project, ctx.cfg
    decisions = _load_decisions(project, ctx.round_no)
    moves = {}
    coarse_rows = []
    for s in project.load_samples():
        if s.status != Status.REFINED:
            continue
        dec = decisions.get(s.id)
        if dec is None:
            continue
        accepted = dec["outcome"] == "accepted" and not dec["conflict"]
        if accepted and dec["label"] != cfg.noise_class:
            moves[s.id] = Status.COMMITTED
            coarse_rows.append({
                "sample_id": s.id, "label": dec["label"], "topic_conf": dec["topic_conf"],
                "label_conf": dec["label_conf"], "round": ctx.round_no,
            })
        else:
            moves[s.id] = Status.DISCARDED
    if moves:
        project.apply_transitions(moves)
    if coarse_rows:
        _append_coarse(project, sorted(coarse_rows, key=lambda r: r["sample_id"]))
    logger.info("distill finalized: %d committed, %d removed",
                len(coarse_rows), len(moves) - len(coarse_rows))


# --------------------------------------------------------------------------
# relabel stage
# --------------------------------------------------------------------------

def build_category_prompt(cfg: PipelineConfig, class_id: str) -> str:
    name = cfg.label_space.display_name(class_id)
    return (
        f"Subject category: {name}. Locate the subject cells and report which "
        f"of these trace attributes each cell shows: {', '.join(cfg.traces)}."
    )


def _run_relabel(ctx: RoundContext) -> bool:
    if not ctx.done("relabel"):
        _step_relabel(ctx)
        ctx.mark("relabel")
    return True


def _coarse_labels(project: Project) -> dict[str, str]:
    labels = {}
    for row in read_jsonl(project.coarse_labels_path):
        labels[row["sample_id"]] = row["label"]
    return labels


def _step_relabel(ctx: RoundContext) -> None:
    project, cfg = ctx.project, ctx.cfg
    coarse = _coarse_labels(project)
    committed = [s for s in project.load_samples() if s.status == Status.COMMITTED]
    if not committed:
        raise PreconditionError("no committed samples; run the distill stage first")
    semantic_rows = []
    review_rows = []
    failed_rows = []
    categories = list(cfg.label_space.class_ids)
    for s in sorted(committed, key=lambda s: s.id):
        label = coarse.get(s.id)
        if label is None:
            failed_rows.append({"sample_id": s.id, "error": "no coarse label"})
            continue
        prompt = build_category_prompt(cfg, label)
        try:
            sem, needs_review = _relabel_one(ctx, s, label, prompt, categories)
        except (ProtocolError, SidecarError) as exc:
            failed_rows.append({"sample_id": s.id, "error": str(exc)})
            continue
        semantic_rows.append(revlm.semantic_label_row(sem))
        if needs_review:
            review_rows.append({
                "sample_id": s.id, "coarse_label": label,
                "proposed_category": sem.category, "traces": sorted(sem.traces),
            })
    write_jsonl(project.semantic_labels_path, semantic_rows)
    write_jsonl(ctx.dir / "relabel_review.jsonl", review_rows)
    write_jsonl(ctx.dir / "relabel_failed.jsonl", failed_rows)


def _relabel_one(ctx: RoundContext, sample: Sample, label: str, prompt: str,
                 categories: list[str]) -> tuple[revlm.SemanticLabel, bool]:
    project, cfg = ctx.project, ctx.cfg
    data = project.image_path(sample).read_bytes()
    with Image.open(io.BytesIO(data)) as img:
        width, height = img.size
    grids = {g: revlm.make_grid(width, height, g) for g in revlm.GRANULARITIES}
    raw = ctx.client.propose(
        data, prompt,
        {g.value: [b.as_tuple() for b in grid.boxes] for g, grid in grids.items()},
        cfg.traces,
    )
    proposer_out, notes = revlm.parse_proposer_response(raw, cfg.traces)
    if notes:
        append_jsonl(ctx.dir / "relabel_audit.jsonl",
                     [{"sample_id": sample.id, "note": n} for n in notes])
    global_payload = ctx.client.validate(data, prompt, "global", categories, cfg.traces)
    regions = _local_regions(grids, proposer_out)
    local_payload = ctx.client.validate(data, prompt, "local", categories, cfg.traces,
                                        regions=regions)
    global_verdict = revlm.ValidatorVerdict.from_payload(global_payload, cfg.traces)
    local_verdict = revlm.ValidatorVerdict.from_payload(local_payload, cfg.traces)
    return revlm.fuse_verdicts(sample.id, label, global_verdict, local_verdict,
                               proposer_out, cfg.traces, cfg.region_support_min)


def _local_regions(grids: dict[revlm.Granularity, revlm.RegionGrid],
                   proposer_out: revlm.ProposerOutput) -> list[tuple[int, int, int, int]]:
    """Subject cells plus any trace-flagged cells, both granularities."""
    regions = []
    for gran in revlm.GRANULARITIES:
        grid = grids[gran]
        flagged = {
            j for j, cell in enumerate(proposer_out.flags[gran])
            if any(v for t, v in cell.items() if t != revlm.NONE_TRACE)
        }
        for j in sorted(proposer_out.subject_indices[gran] | flagged):
            regions.append(grid.boxes[j].as_tuple())
    return regions


# --------------------------------------------------------------------------
# resolution ingestion (CLI / review API)
# --------------------------------------------------------------------------

def ingest_triage_labels(project: Project, rows: list[dict]) -> int:
    """Append triage relevance labels to the round awaiting them."""
    round_no, remaining = pending_triage(project)
    if round_no is None:
        raise PreconditionError("no filter round is awaiting triage labels")
    valid_ids = {r["sample_id"] for r in read_jsonl(
        project.round_dir(round_no) / "triage_requests.jsonl")}
    out = []
    for row in rows:
        sid = row.get("sample_id")
        if sid not in valid_ids:
            raise PreconditionError(f"sample {sid!r} is not in the triage request set")
        try:
            relevance = int(row["relevance"])
        except (KeyError, TypeError, ValueError):
            raise PreconditionError(f"sample {sid}: relevance must be 0 or 1") from None
        if relevance not in (0, 1):
            raise PreconditionError(f"relevance must be 0 or 1, got {row['relevance']!r}")
        out.append({"sample_id": sid, "relevance": relevance,
                    "annotator": row.get("annotator", "unknown")})
    if out:
        append_jsonl(project.round_dir(round_no) / "triage_labels.jsonl", out)
    return len(out)


def ingest_escalation_resolutions(project: Project, rows: list[dict]) -> int:
    """Route escalation resolutions to the rounds their items came from.

    Before the distill stage finalizes, resolutions are consumed by the next
    round's integrate step. Afterwards no round will run, so they take
    effect immediately: annotation appended, sample committed or discarded.
    """
    label_ids = set(project.config.label_space.class_ids)
    # Route against every unintegrated item so a second resolution for the
    # same sample is accepted (last write wins, audit kept in the file).
    round_of = {row["sample_id"]: n for n, row in _unintegrated_escalations(project)}
    routed: dict[int, list[dict]] = {}
    for row in rows:
        sid = row.get("sample_id")
        if sid not in round_of:
            raise PreconditionError(f"sample {sid!r} has no pending escalation")
        if row.get("label") not in label_ids:
            raise PreconditionError(f"unknown label {row.get('label')!r} for sample {sid}")
        routed.setdefault(round_of[sid], []).append({
            "sample_id": sid, "label": row["label"],
            "annotator": row.get("annotator", "unknown"),
        })
    for n, out in sorted(routed.items()):
        append_jsonl(project.round_dir(n) / "resolutions.jsonl", out)
    total = sum(len(v) for v in routed.values())
    if distill_finalized(project):
        # mutates manifest + annotation log, so it needs the writer lock
        with project.lock():
            _apply_resolutions_immediately(project, routed)
    return total


def _apply_resolutions_immediately(project: Project, routed: dict[int, list[dict]]) -> None:
    noise = project.config.noise_class
    # Post-stage annotations get a fresh round number so they can never
    # collide with in-round annotations of the same samples.
    annotation_round = (project.latest_round() or 0) + 1
    for n, rows in sorted(routed.items()):
        esc_path = project.round_dir(n) / "escalations.jsonl"
        items = read_jsonl(esc_path)
        by_id = {row["sample_id"]: row for row in rows}
        records = []
        moves = {}
        coarse_rows = []
        decisions = _load_decisions(project, n)
        for item in items:
            res = by_id.get(item["sample_id"])
            if res is None or item.get("status") != "pending":
                continue
            item["status"] = "resolved"
            item["resolution"] = res["label"]
            records.append(AnnotationRecord(
                sample_id=item["sample_id"], label=res["label"],
                annotator=res.get("annotator", "unknown"), round=annotation_round,
                reason=AnnotationReason(item["reason"]),
            ))
            if res["label"] == noise:
                moves[item["sample_id"]] = Status.DISCARDED
            else:
                moves[item["sample_id"]] = Status.COMMITTED
                dec = decisions.get(item["sample_id"], {})
                coarse_rows.append({
                    "sample_id": item["sample_id"], "label": res["label"],
                    "topic_conf": dec.get("topic_conf"),
                    "label_conf": dec.get("label_conf"), "round": annotation_round,
                })
        write_jsonl(esc_path, items)
        if records:
            append_annotations(project.annotations_path, records)
        if moves:
            project.apply_transitions(moves)
        if coarse_rows:
            _append_coarse(project, coarse_rows)


def ingest_seed_annotations(project: Project, rows: list[dict]) -> int:
    """Record seed reference labels (round 0) used to build the first index."""
    label_ids = set(project.config.label_space.class_ids)
    known = {s.id for s in project.load_samples()}
    records = []
    for row in rows:
        sid = row.get("sample_id")
        if sid not in known:
            raise PreconditionError(f"unknown sample {sid!r} in seed annotations")
        if row.get("label") not in label_ids:
            raise PreconditionError(f"unknown label {row.get('label')!r} for sample {sid}")
        records.append(AnnotationRecord(
            sample_id=sid, label=row["label"], annotator=row.get("annotator", "unknown"),
            round=0, reason=AnnotationReason.SEED,
        ))
    with project.lock():
        append_annotations(project.annotations_path, records)
    return len(records)


def ingest_relabel_resolutions(project: Project, rows: list[dict]) -> int:
    """Apply human arbitration to semantic labels queued for review."""
    label_ids = set(project.config.label_space.class_ids)
    semantic = read_jsonl(project.semantic_labels_path)
    by_id = {row["sample_id"]: row for row in semantic}
    applied = 0
    audit = []
    for row in rows:
        sid = row.get("sample_id")
        if sid not in by_id:
            raise PreconditionError(f"sample {sid!r} has no semantic label to arbitrate")
        if row.get("label") not in label_ids:
            raise PreconditionError(f"unknown label {row.get('label')!r} for sample {sid}")
        by_id[sid]["category"] = row["label"]
        audit.append({"sample_id": sid, "label": row["label"],
                      "annotator": row.get("annotator", "unknown")})
        applied += 1
    if applied:
        with project.lock():
            write_jsonl(project.semantic_labels_path, semantic)
            append_jsonl(project.root / "labels" / "relabel_resolutions.jsonl", audit)
    return applied
