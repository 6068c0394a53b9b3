"""Command-line surface for the curation engine."""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click

from . import acquisition, metrics as metrics_mod, orchestrator, review_api
from .config import PipelineConfig, load_config
from .errors import WinnowError
from .manifest import read_jsonl
from .project import Project
from .sidecar_client import SidecarClient
from .types import Stage, Status


def _fail(ctx: click.Context, exc: Exception) -> None:
    if ctx.obj and ctx.obj.get("json"):
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    else:
        sys.stderr.write(f"error: {exc}\n")
    sys.exit(1)


@click.group()
@click.option("--json", "json_errors", is_flag=True,
              help="Emit machine-readable error JSON on stderr.")
@click.pass_context
def main(ctx: click.Context, json_errors: bool) -> None:
    """Corner-case dataset curation: filter, distill, relabel."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_errors


def _project(path: str) -> Project:
    return Project.open(Path(path))


@main.command()
@click.argument("directory", type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Start from an existing config file instead of defaults.")
@click.pass_context
def init(ctx: click.Context, directory: str, config_path: str | None) -> None:
    """Create a new project directory with the default configuration."""
    try:
        cfg = load_config(Path(config_path)) if config_path else PipelineConfig()
        Project.init(Path(directory), cfg)
        click.echo(f"initialized project at {directory}")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.argument("source", type=click.Path(exists=True))
@click.option("--keyword", "keywords", multiple=True,
              help="Keyword folder(s) to ingest; defaults to every folder under SOURCE.")
@click.option("--lang", default="en", show_default=True)
@click.pass_context
def ingest(ctx: click.Context, project_dir: str, source: str, keywords: tuple[str, ...],
           lang: str) -> None:
    """Ingest crawl results from a directory tree (one folder per keyword)."""
    try:
        project = _project(project_dir)
        fetcher = acquisition.DirectoryFetcher(Path(source))
        if not keywords:
            keywords = tuple(sorted(p.name.replace("-", " ") for p in Path(source).iterdir()
                                    if p.is_dir()))
        results = []
        for kw in keywords:
            results.extend((data, kw, lang) for data in fetcher.fetch(kw, lang))
        report = acquisition.ingest_crawl(project, results)
        click.echo(f"added={report.added} duplicate={report.duplicate} "
                   f"rejected={report.rejected}")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command("expand-keywords")
@click.argument("project_dir", type=click.Path(exists=True))
@click.argument("category")
@click.option("--prompt", required=True, help="Category prompt with dataset context.")
@click.option("--seed-image", "seed_images", multiple=True, type=click.Path(exists=True))
@click.option("--lang", "langs", multiple=True, default=("en",), show_default=True)
@click.option("--lexicon", "lexicon_path", type=click.Path(exists=True),
              help="TSV lexicon (term<TAB>lang<TAB>translation) for multilingual expansion.")
@click.pass_context
def expand_keywords_cmd(ctx: click.Context, project_dir: str, category: str, prompt: str,
                        seed_images: tuple[str, ...], langs: tuple[str, ...],
                        lexicon_path: str | None) -> None:
    """Build the crawl keyword corpus for a category via the sidecar VLM."""
    try:
        project = _project(project_dir)
        client = SidecarClient(project.config.sidecar_url)
        lexicon = (acquisition.TableLexicon.from_tsv(Path(lexicon_path))
                   if lexicon_path else acquisition.IdentityLexicon())
        corpus = acquisition.expand_keywords(
            [Path(p).read_bytes() for p in seed_images], prompt, category, list(langs),
            client, lexicon, project.config.keywords_per_channel,
        )
        for entry in corpus.entries:
            click.echo(f"{entry.lang}\t{entry.source}\t{entry.text}")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.group()
def round() -> None:
    """Round execution."""


@round.command("run")
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--stage", required=True, type=click.Choice([s.value for s in Stage]))
@click.option("--force", is_flag=True, help="Proceed past pending escalations/rounds.")
@click.pass_context
def round_run(ctx: click.Context, project_dir: str, stage: str, force: bool) -> None:
    """Run (or resume) one round of the given stage."""
    try:
        project = _project(project_dir)
        state = orchestrator.run_round(project, Stage(stage), force=force)
        click.echo(json.dumps(state.to_json()))
    except WinnowError as exc:
        _fail(ctx, exc)


@main.group()
def escalations() -> None:
    """Escalation queue inspection."""


@escalations.command("list")
@click.argument("project_dir", type=click.Path(exists=True))
@click.pass_context
def escalations_list(ctx: click.Context, project_dir: str) -> None:
    """Print pending escalations, one line per item."""
    try:
        project = _project(project_dir)
        for n, row in orchestrator.pending_escalations(project):
            click.echo(f"round={n} sample={row['sample_id']} reason={row['reason']} "
                       f"attributed={row.get('attributed_class')} score={row.get('score')}")
    except WinnowError as exc:
        _fail(ctx, exc)


@escalations.command("export")
@click.argument("project_dir", type=click.Path(exists=True))
@click.argument("output", type=click.Path())
@click.pass_context
def escalations_export(ctx: click.Context, project_dir: str, output: str) -> None:
    """Write pending escalations to a JSONL file for offline labeling."""
    try:
        project = _project(project_dir)
        rows = [dict(row, round=n) for n, row in orchestrator.pending_escalations(project)]
        Path(output).write_text(
            "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
        click.echo(f"wrote {len(rows)} items to {output}")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.argument("resolution_file", type=click.Path(exists=True))
@click.option("--kind", required=True,
              type=click.Choice(["triage", "escalation", "seed", "relabel"]))
@click.pass_context
def resolve(ctx: click.Context, project_dir: str, resolution_file: str, kind: str) -> None:
    """Ingest human resolutions from a JSONL file."""
    try:
        project = _project(project_dir)
        rows = read_jsonl(Path(resolution_file))
        if kind == "triage":
            n = orchestrator.ingest_triage_labels(project, rows)
        elif kind == "escalation":
            n = orchestrator.ingest_escalation_resolutions(project, rows)
        elif kind == "seed":
            n = orchestrator.ingest_seed_annotations(project, rows)
        else:
            n = orchestrator.ingest_relabel_resolutions(project, rows)
        click.echo(f"ingested {n} {kind} resolutions")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command("metrics")
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True),
              help="JSONL reference: sample_id, label, clean, optional category/traces.")
@click.option("--confusion-csv", "confusion_path", type=click.Path(),
              help="Also write the confusion matrix as CSV.")
@click.pass_context
def metrics_cmd(ctx: click.Context, project_dir: str, reference: str,
                confusion_path: str | None) -> None:
    """Score the curated dataset against a human-verified reference."""
    try:
        project = _project(project_dir)
        reference_rows = read_jsonl(Path(reference))
        truth = {r["sample_id"]: r["label"] for r in reference_rows}
        clean = {r["sample_id"]: bool(r["clean"]) for r in reference_rows if "clean" in r}
        semantic_truth = {
            r["sample_id"]: (r["category"], frozenset(r.get("traces", [])))
            for r in reference_rows if "category" in r
        }
        ref = metrics_mod.EvalReference(truth=truth, clean_flags=clean,
                                        semantic_truth=semantic_truth or None)
        predictions = {
            row["sample_id"]: row["label"]
            for row in read_jsonl(project.coarse_labels_path)
            if row["sample_id"] in truth
        }
        prf = metrics_mod.macro_prf(predictions, truth)
        nrr, cdrr = (None, None)
        if clean:
            nrr, cdrr = metrics_mod.nrr_cdrr(project.final_statuses(), ref)
        perfect = None
        if semantic_truth:
            semantic = {
                row["sample_id"]: (row["category"], frozenset(row["traces"]))
                for row in read_jsonl(project.semantic_labels_path)
            }
            if semantic:
                perfect = metrics_mod.perfect_match(semantic, semantic_truth,
                                                    project.config.synonyms or None)
        click.echo(metrics_mod.report_json(prf, nrr, cdrr, perfect))
        click.echo(metrics_mod.report_table(prf, nrr, cdrr), err=False)
        if confusion_path:
            classes = list(project.config.label_space.class_ids)
            mat = metrics_mod.confusion_matrix(predictions, truth, classes)
            Path(confusion_path).write_text(metrics_mod.confusion_csv(mat, classes),
                                            encoding="utf-8")
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--format", "fmt", default="jsonl", show_default=True,
              type=click.Choice(["jsonl", "csv"]))
@click.option("--output", type=click.Path(), help="Write to a file instead of stdout.")
@click.pass_context
def export(ctx: click.Context, project_dir: str, fmt: str, output: str | None) -> None:
    """Export committed samples with coarse and semantic labels."""
    try:
        project = _project(project_dir)
        coarse = {row["sample_id"]: row for row in read_jsonl(project.coarse_labels_path)}
        semantic = {row["sample_id"]: row for row in read_jsonl(project.semantic_labels_path)}
        rows = []
        for s in sorted(project.load_samples(), key=lambda s: s.id):
            if s.status != Status.COMMITTED:
                continue
            c = coarse.get(s.id, {})
            m = semantic.get(s.id, {})
            rows.append({
                "sample_id": s.id, "image_path": s.image_path, "keyword": s.keyword,
                "label": c.get("label"), "category": m.get("category"),
                "traces": m.get("traces", []),
            })
        if fmt == "jsonl":
            text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
        else:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["sample_id", "image_path", "keyword", "label", "category",
                             "traces"])
            for r in rows:
                writer.writerow([r["sample_id"], r["image_path"], r["keyword"],
                                 r["label"], r["category"], "|".join(r["traces"])])
            text = buf.getvalue()
        if output:
            Path(output).write_text(text, encoding="utf-8")
            click.echo(f"wrote {len(rows)} rows to {output}")
        else:
            click.echo(text, nl=False)
    except WinnowError as exc:
        _fail(ctx, exc)


@main.command("serve-review")
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--port", default=8610, show_default=True, type=int)
@click.pass_context
def serve_review(ctx: click.Context, project_dir: str, port: int) -> None:
    """Serve the review API consumed by the annotation UI."""
    try:
        project = _project(project_dir)
        review_api.serve(project, port)
    except WinnowError as exc:
        _fail(ctx, exc)


if __name__ == "__main__":
    main()
