"""HTTP service exposing the model ops.

One endpoint per op under /v1/, plus /v1/health reporting the loaded model
ids. Requests are validated against the payload schemas before they reach
the backend; violations come back as 400 with an error code, backend
failures as 502 with a retry-after hint. A semaphore caps concurrent
backend calls.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import jsonschema

from .mock_backend import MockBackend
from .protocol import (MAX_PAYLOAD_BYTES, OPS, PAYLOAD_SCHEMAS, PROTOCOL_VERSION, major)

logger = logging.getLogger(__name__)

_VALIDATORS = {op: jsonschema.Draft202012Validator(schema)
               for op, schema in PAYLOAD_SCHEMAS.items()}


class BackendError(Exception):
    """Raised by backends for transient model failures (mapped to 502)."""


def _decode_image(field: str) -> bytes:
    try:
        data = base64.b64decode(field, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise SchemaViolation(f"invalid base64 image payload: {exc}") from exc
    if len(data) > MAX_PAYLOAD_BYTES:
        raise SchemaViolation(f"image payload {len(data)} bytes exceeds "
                              f"{MAX_PAYLOAD_BYTES}")
    return data


class SchemaViolation(Exception):
    pass


def dispatch(backend, op: str, payload: dict) -> dict:
    if op == "embed_image":
        return backend.embed_image(_decode_image(payload["image_b64"]),
                                   payload["expert"])
    if op == "embed_text":
        return backend.embed_text(payload["text"], payload["expert"])
    if op == "describe":
        return backend.describe(_decode_image(payload["image_b64"]), payload["prompt"])
    if op == "expand_keywords":
        return backend.expand_keywords([_decode_image(i) for i in payload["images_b64"]],
                                       payload["prompt"], payload["channel"])
    if op == "propose":
        return backend.propose(_decode_image(payload["image_b64"]), payload["prompt"],
                               payload["grids"], payload["traces"])
    if op == "validate":
        return backend.validate(_decode_image(payload["image_b64"]), payload["prompt"],
                                payload["scope"], payload["categories"],
                                payload["traces"], payload.get("regions"))
    if op == "revise_prompt":
        return backend.revise_prompt(payload["prompt"], payload["feedback"])
    raise SchemaViolation(f"unknown op {op!r}")


class SidecarHandler(BaseHTTPRequestHandler):
    backend: MockBackend
    workers: threading.Semaphore

    def log_message(self, fmt, *args):
        logger.debug("sidecar: " + fmt, *args)

    def _send(self, obj: dict, status: int = 200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str, **extra) -> None:
        self._send({"protocol": PROTOCOL_VERSION,
                    "error": {"code": code, "message": message}, **extra}, status=status)

    def do_GET(self) -> None:
        if self.path == "/v1/health":
            self._send({
                "protocol": PROTOCOL_VERSION,
                "mode": self.backend.mode,
                "models": dict(self.backend.models),
            })
        else:
            self._error(404, "not_found", f"unknown path {self.path}")

    def do_POST(self) -> None:
        if not self.path.startswith("/v1/"):
            self._error(404, "not_found", f"unknown path {self.path}")
            return
        op = self.path[len("/v1/"):]
        if op not in OPS:
            self._error(404, "not_found", f"unknown op {op!r}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            if length > MAX_PAYLOAD_BYTES * 2:
                self._error(400, "schema", f"request body exceeds cap ({length} bytes)")
                return
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._error(400, "schema", f"body is not valid JSON: {exc}")
            return
        if major(body.get("protocol", "")) != major(PROTOCOL_VERSION):
            self._error(400, "protocol",
                        f"protocol {body.get('protocol')!r} incompatible with "
                        f"{PROTOCOL_VERSION}")
            return
        if body.get("op") != op:
            self._error(400, "schema", f"envelope op {body.get('op')!r} does not match "
                                       f"endpoint {op!r}")
            return
        payload = body.get("payload")
        errors = sorted(_VALIDATORS[op].iter_errors(payload), key=str)
        if errors:
            self._error(400, "schema", f"payload violates {op} schema: "
                                       f"{errors[0].message}")
            return
        start = time.monotonic()
        try:
            with self.workers:
                result = dispatch(self.backend, op, payload)
        except SchemaViolation as exc:
            self._error(400, "schema", str(exc))
            return
        except BackendError as exc:
            self._error(502, "backend", str(exc), retry_after=1)
            return
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("backend failure on %s", op)
            self._error(502, "backend", str(exc), retry_after=1)
            return
        latency_ms = (time.monotonic() - start) * 1000.0
        model_key = payload.get("expert") if op.startswith("embed") else "vlm"
        self._send({
            "protocol": PROTOCOL_VERSION,
            "op": op,
            "result": result,
            "metadata": {
                "model": self.backend.models.get(model_key, "unknown"),
                "preprocessing": self.backend.preprocessing,
                "latency_ms": round(latency_ms, 3),
            },
        })


def make_server(backend: MockBackend, port: int = 0,
                max_workers: int = 8) -> ThreadingHTTPServer:
    handler = type("BoundSidecarHandler", (SidecarHandler,), {
        "backend": backend,
        "workers": threading.Semaphore(max_workers),
    })
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def start_background(backend: MockBackend, port: int = 0,
                     max_workers: int = 8) -> tuple[ThreadingHTTPServer, threading.Thread]:
    server = make_server(backend, port, max_workers)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


def serve(backend: MockBackend, port: int, max_workers: int = 8) -> None:
    server = make_server(backend, port, max_workers)
    logger.info("sidecar (%s mode) listening on http://127.0.0.1:%d",
                backend.mode, server.server_port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
