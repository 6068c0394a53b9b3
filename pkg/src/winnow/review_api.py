"""Localhost HTTP+JSON API for the human review UI.

The UI never touches engine files; it reads queues and posts resolutions
through this surface. Endpoints:

    GET  /rounds/state          latest round state
    GET  /queue/triage          pending triage requests of the waiting round
    GET  /queue/escalations     pending escalation items across rounds
    GET  /queue/relabel         semantic labels queued for arbitration
    POST /resolutions           {"kind": ..., "annotator": ..., "items": [...]}
    GET  /sample/<id>/image     raw image bytes

Resolution payload shapes per kind:

    triage      items: [{"sample_id": ..., "relevance": 0|1}]
    escalation  items: [{"sample_id": ..., "label": <class id>}]
    relabel     items: [{"sample_id": ..., "label": <class id>}]
    seed        items: [{"sample_id": ..., "label": <class id>}]
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import orchestrator
from .errors import WinnowError
from .manifest import read_jsonl
from .project import Project
from .types import Stage

logger = logging.getLogger(__name__)

RESOLUTION_KINDS = ("triage", "escalation", "relabel", "seed")

_CONTENT_TYPES = {".jpg": "image/jpeg", ".jpeg": "image/jpeg", ".png": "image/png",
                  ".webp": "image/webp"}


def _queue_triage(project: Project) -> dict:
    round_no, remaining = orchestrator.pending_triage(project)
    clusters: dict[int, int] = {}
    for row in remaining:
        clusters[row["cluster_id"]] = clusters.get(row["cluster_id"], 0) + 1
    return {
        "kind": "triage",
        "round": round_no,
        "items": remaining,
        "clusters": [{"cluster_id": cid, "pending": n} for cid, n in sorted(clusters.items())],
    }


def _queue_escalations(project: Project) -> dict:
    items = [
        {
            "round": n,
            "sample_id": row["sample_id"],
            "reason": row["reason"],
            "attributed_class": row.get("attributed_class"),
            "score": row.get("score"),
        }
        for n, row in orchestrator.pending_escalations(project)
    ]
    return {"kind": "escalation", "items": items}


def _queue_relabel(project: Project) -> dict:
    items = []
    for n in reversed(project.list_rounds()):
        state = project.round_state(n)
        if state is not None and state.stage == Stage.RELABEL:
            items = read_jsonl(project.round_dir(n) / "relabel_review.jsonl")
            break
    return {"kind": "relabel", "items": items}


def _apply_resolutions(project: Project, body: dict) -> int:
    kind = body.get("kind")
    if kind not in RESOLUTION_KINDS:
        raise WinnowError(f"unknown resolution kind {kind!r}")
    items = body.get("items")
    if not isinstance(items, list) or not items:
        raise WinnowError("items must be a non-empty list")
    annotator = body.get("annotator", "unknown")
    rows = []
    for item in items:
        if not isinstance(item, dict) or "sample_id" not in item:
            raise WinnowError(f"bad resolution item: {item!r}")
        row = dict(item)
        row.setdefault("annotator", annotator)
        rows.append(row)
    if kind == "triage":
        return orchestrator.ingest_triage_labels(project, rows)
    if kind == "escalation":
        return orchestrator.ingest_escalation_resolutions(project, rows)
    if kind == "seed":
        return orchestrator.ingest_seed_annotations(project, rows)
    return orchestrator.ingest_relabel_resolutions(project, rows)


class ReviewHandler(BaseHTTPRequestHandler):
    project: Project  # set on the subclass built by make_server

    def log_message(self, fmt, *args):  # route access logs through logging
        logger.debug("review api: " + fmt, *args)

    def _send_json(self, obj: dict, status: int = 200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        try:
            if self.path == "/rounds/state":
                latest = self.project.latest_round()
                if latest is None:
                    self._send_json({"error": "no rounds yet"}, status=404)
                    return
                state = self.project.round_state(latest)
                self._send_json(state.to_json())
            elif self.path == "/queue/triage":
                self._send_json(_queue_triage(self.project))
            elif self.path == "/queue/escalations":
                self._send_json(_queue_escalations(self.project))
            elif self.path == "/queue/relabel":
                self._send_json(_queue_relabel(self.project))
            elif self.path.startswith("/sample/") and self.path.endswith("/image"):
                self._send_image(self.path.split("/")[2])
            else:
                self._send_json({"error": f"unknown path {self.path}"}, status=404)
        except WinnowError as exc:
            self._send_json({"error": str(exc)}, status=400)
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("review api failure")
            self._send_json({"error": str(exc)}, status=500)

    def _send_image(self, sample_id: str) -> None:
        sample = next((s for s in self.project.load_samples() if s.id == sample_id), None)
        if sample is None:
            self._send_json({"error": f"unknown sample {sample_id}"}, status=404)
            return
        path = self.project.image_path(sample)
        if not path.exists():
            self._send_json({"error": f"missing image file for {sample_id}"}, status=404)
            return
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type",
                         _CONTENT_TYPES.get(path.suffix.lower(), "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self) -> None:
        if self.path != "/resolutions":
            self._send_json({"error": f"unknown path {self.path}"}, status=404)
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            accepted = _apply_resolutions(self.project, body)
            self._send_json({"accepted": accepted})
        except (json.JSONDecodeError, ValueError) as exc:
            self._send_json({"error": f"bad request body: {exc}"}, status=400)
        except WinnowError as exc:
            self._send_json({"error": str(exc)}, status=400)
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("review api failure")
            self._send_json({"error": str(exc)}, status=500)


def make_server(project: Project, port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundReviewHandler", (ReviewHandler,), {"project": project})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def start_background(project: Project, port: int = 0) -> tuple[ThreadingHTTPServer, threading.Thread]:
    server = make_server(project, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


def serve(project: Project, port: int) -> None:
    server = make_server(project, port)
    logger.info("review api listening on http://127.0.0.1:%d", server.server_port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
