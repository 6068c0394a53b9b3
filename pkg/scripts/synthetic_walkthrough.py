#!/usr/bin/env python3
"""End-to-end walkthrough on a synthetic fixture, driven through the CLI.

Builds a project with synthetic per-expert embeddings (three part classes
plus off-topic noise), runs distillation rounds with an oracle annotator
resolving every escalation, and prints the final curation metrics. Runs
fully offline; no sidecar required.

Usage: python scripts/synthetic_walkthrough.py [workdir]
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from winnow.config import PipelineConfig
from winnow.manifest import read_jsonl
from winnow.testing import make_synthetic_project, resolve_pending_with_truth


def cli(*args: str) -> str:
    result = subprocess.run([sys.executable, "-m", "winnow.cli", *args],
                            capture_output=True, text=True)
    if result.returncode != 0:
        sys.stderr.write(result.stderr)
        raise SystemExit(f"command failed: winnow {' '.join(args)}")
    return result.stdout


def main() -> None:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
    project_dir = workdir / "demo-project"
    print(f"== building synthetic project at {project_dir}")
    config = PipelineConfig(rng_seed=1234, max_rounds_distill=3, escalation_budget=0.10)
    dataset = make_synthetic_project(project_dir, seed=1234, n_per_class=100,
                                     config=config)

    rounds = 3
    for i in range(rounds):
        print(f"== distill round {i + 1}/{rounds}")
        out = cli("round", "run", str(project_dir), "--stage", "distill")
        print("  ", out.strip())
        resolved = resolve_pending_with_truth(dataset)
        print(f"   oracle annotator resolved {resolved} escalations")

    reference = workdir / "reference.jsonl"
    with open(reference, "w", encoding="utf-8") as fh:
        for sid, label in sorted(dataset.truth.items()):
            fh.write(json.dumps({"sample_id": sid, "label": label,
                                 "clean": label != dataset.noise_class}) + "\n")

    print("== metrics")
    out = cli("metrics", str(project_dir), "--reference", str(reference))
    print(out)

    print("== export (first 3 rows)")
    export = cli("export", str(project_dir), "--format", "csv")
    print("\n".join(export.splitlines()[:4]))

    committed = sum(1 for row in read_jsonl(project_dir / "manifest.jsonl")
                    if row["status"] == "committed")
    print(f"== done: {committed} samples committed")


if __name__ == "__main__":
    main()
