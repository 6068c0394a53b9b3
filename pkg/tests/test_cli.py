"""Command-line surface."""

import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from winnow.cli import main
from winnow.config import PipelineConfig
from winnow.testing import make_synthetic_project, resolve_pending_with_truth


@pytest.fixture
def runner():
    return CliRunner()


class TestInit:
    def test_init_creates_layout(self, runner, tmp_path):
        result = runner.invoke(main, ["init", str(tmp_path / "proj")])
        assert result.exit_code == 0
        assert (tmp_path / "proj" / "config.cfg").exists()
        assert (tmp_path / "proj" / "manifest.jsonl").exists()

    def test_init_twice_fails(self, runner, tmp_path):
        runner.invoke(main, ["init", str(tmp_path / "proj")])
        result = runner.invoke(main, ["init", str(tmp_path / "proj")])
        assert result.exit_code == 1
        assert "already initialized" in result.stderr

    def test_json_errors(self, runner, tmp_path):
        runner.invoke(main, ["init", str(tmp_path / "proj")])
        result = runner.invoke(main, ["--json", "init", str(tmp_path / "proj")])
        assert result.exit_code == 1
        doc = json.loads(result.stderr.strip())
        assert doc["error"] == "PreconditionError"

    def test_unknown_flag_exit_code_2(self, runner, tmp_path):
        result = runner.invoke(main, ["init", "--bogus", str(tmp_path / "p")])
        assert result.exit_code == 2


class TestRound:
    def test_distill_without_annotations(self, runner, tmp_path):
        ds = make_synthetic_project(tmp_path / "p", seed=1, n_per_class=8,
                                    seeds_per_class=0, config=PipelineConfig(rng_seed=1))
        result = runner.invoke(main, ["round", "run", str(ds.project.root),
                                      "--stage", "distill"])
        assert result.exit_code == 1
        assert "index empty" in result.stderr

    def test_distill_round_emits_state_json(self, runner, tmp_path):
        ds = make_synthetic_project(tmp_path / "p", seed=2, n_per_class=20,
                                    config=PipelineConfig(rng_seed=2, max_rounds_distill=5))
        result = runner.invoke(main, ["round", "run", str(ds.project.root),
                                      "--stage", "distill"])
        assert result.exit_code == 0, result.output
        state = json.loads(result.output)
        assert state["stage"] == "distill"
        assert state["round"] == 0

    def test_escalations_list_and_export(self, runner, tmp_path):
        ds = make_synthetic_project(tmp_path / "p", seed=3, n_per_class=20,
                                    config=PipelineConfig(rng_seed=3, max_rounds_distill=5))
        runner.invoke(main, ["round", "run", str(ds.project.root), "--stage", "distill"])
        result = runner.invoke(main, ["escalations", "list", str(ds.project.root)])
        assert result.exit_code == 0
        assert "reason=" in result.output
        out_file = tmp_path / "esc.jsonl"
        result = runner.invoke(main, ["escalations", "export", str(ds.project.root),
                                      str(out_file)])
        assert result.exit_code == 0
        assert out_file.exists()

    def test_resolve_escalations_file(self, runner, tmp_path):
        ds = make_synthetic_project(tmp_path / "p", seed=4, n_per_class=20,
                                    config=PipelineConfig(rng_seed=4, max_rounds_distill=5))
        runner.invoke(main, ["round", "run", str(ds.project.root), "--stage", "distill"])
        from winnow import orchestrator
        pending = orchestrator.pending_escalations(ds.project)
        res_file = tmp_path / "res.jsonl"
        with open(res_file, "w") as fh:
            for _, row in pending:
                fh.write(json.dumps({"sample_id": row["sample_id"],
                                     "label": ds.truth[row["sample_id"]],
                                     "annotator": "cli"}) + "\n")
        result = runner.invoke(main, ["resolve", str(ds.project.root), str(res_file),
                                      "--kind", "escalation"])
        assert result.exit_code == 0
        assert f"ingested {len(pending)}" in result.output


class TestMetricsExport:
    def finished_project(self, tmp_path):
        cfg = PipelineConfig(rng_seed=5, max_rounds_distill=2, escalation_budget=0.10)
        ds = make_synthetic_project(tmp_path / "p", seed=5, n_per_class=30, config=cfg)
        runner = CliRunner()
        for _ in range(2):
            runner.invoke(main, ["round", "run", str(ds.project.root),
                                 "--stage", "distill"])
            resolve_pending_with_truth(ds)
        ref = tmp_path / "ref.jsonl"
        with open(ref, "w") as fh:
            for sid, label in sorted(ds.truth.items()):
                fh.write(json.dumps({"sample_id": sid, "label": label,
                                     "clean": label != ds.noise_class}) + "\n")
        return ds, ref

    def test_metrics_report(self, runner, tmp_path):
        ds, ref = self.finished_project(tmp_path)
        result = runner.invoke(main, ["metrics", str(ds.project.root),
                                      "--reference", str(ref)])
        assert result.exit_code == 0, result.output
        # output is the JSON document followed by the plain-text table
        doc = json.loads(result.output[:result.output.rindex("}") + 1])
        assert doc["nrr"] is not None and doc["nrr"] >= 0.9
        assert doc["cdrr"] is not None and doc["cdrr"] >= 0.9
        assert doc["macro"]["f1"] >= 0.9

    def test_confusion_csv_written(self, runner, tmp_path):
        ds, ref = self.finished_project(tmp_path)
        csv_path = tmp_path / "confusion.csv"
        result = runner.invoke(main, ["metrics", str(ds.project.root), "--reference",
                                      str(ref), "--confusion-csv", str(csv_path)])
        assert result.exit_code == 0
        assert csv_path.read_text().startswith("true\\pred,A,B,C,N")

    def test_export_jsonl_and_csv(self, runner, tmp_path):
        ds, ref = self.finished_project(tmp_path)
        result = runner.invoke(main, ["export", str(ds.project.root)])
        assert result.exit_code == 0
        rows = [json.loads(line) for line in result.output.splitlines() if line]
        assert rows and all(r["label"] in ("A", "B", "C") for r in rows)
        out_csv = tmp_path / "out.csv"
        result = runner.invoke(main, ["export", str(ds.project.root), "--format", "csv",
                                      "--output", str(out_csv)])
        assert result.exit_code == 0
        header = out_csv.read_text().splitlines()[0]
        assert header == "sample_id,image_path,keyword,label,category,traces"


class TestWalkthroughScript:
    def test_exits_zero_and_emits_metrics(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "scripts/synthetic_walkthrough.py", str(tmp_path)],
            capture_output=True, text=True, timeout=300)
        assert result.returncode == 0, result.stderr
        assert '"nrr"' in result.stdout
        assert "samples committed" in result.stdout
