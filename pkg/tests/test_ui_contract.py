"""Cross-stack contract: the review UI's headless driver against a live engine.

Resolves a scripted triage queue of three clusters through the real review
API using the compiled frontend driver, then lets the engine consume the
labels in its next round. Skipped when node or the built frontend is absent
so the engine suite stays self-contained.
"""

import shutil
import subprocess
from pathlib import Path

import pytest

from winnow import orchestrator, review_api
from winnow.manifest import read_jsonl
from winnow.types import Stage, Status

from test_orchestrator import filter_project
from conftest import FakeSidecarClient

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
DRIVER = FRONTEND / "dist" / "scripts" / "headless_triage.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not DRIVER.exists(),
    reason="needs node and a built frontend (npm run build in frontend/)",
)


def test_headless_triage_flow_feeds_next_round(tmp_path):
    client = FakeSidecarClient()
    # three coherent keyword groups -> three clusters; no purple/gray here
    project = filter_project(tmp_path, counts={"part a": 15, "part b": 15,
                                               "part c": 15})
    orchestrator.run_round(project, Stage.FILTER, client=client)
    requests = read_jsonl(project.round_dir(0) / "triage_requests.jsonl")
    clusters = {r["cluster_id"] for r in requests}
    assert len(clusters) == 3, f"expected 3 triage clusters, got {clusters}"

    server, _ = review_api.start_background(project)
    try:
        url = f"http://127.0.0.1:{server.server_port}"
        result = subprocess.run(
            ["node", str(DRIVER)],
            env={"REVIEW_API_URL": url, "ANNOTATOR": "headless-ci",
                 "PATH": "/usr/bin:/bin:/usr/local/bin"},
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0, result.stderr
        assert "submitted" in result.stdout
    finally:
        server.shutdown()
        server.server_close()

    # every requested sample now has a label, attributed to the driver
    labels = read_jsonl(project.round_dir(0) / "triage_labels.jsonl")
    assert {r["sample_id"] for r in labels} == {r["sample_id"] for r in requests}
    assert all(r["annotator"] == "headless-ci" for r in labels)

    # the engine consumes the labels and completes the round without error
    orchestrator.run_round(project, Stage.FILTER, client=client)
    assert "complete" in project.completed_steps(0)
    results = read_jsonl(project.round_dir(0) / "triage_result.jsonl")
    assert {r["bucket"] for r in results} == {"strong"}
    statuses = {s.status for s in project.load_samples()}
    assert statuses == {Status.REFINED}
