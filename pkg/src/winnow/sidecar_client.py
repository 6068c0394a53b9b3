"""HTTP client for the model sidecar.

All model inference (embeddings, descriptions, keyword expansion, region
proposals, validation, prompt revision) happens behind this wire contract;
the engine never loads model weights. Envelope::

    POST /v1/<op>
    {"protocol": "1.0", "op": "<op>", "payload": {...}}

    {"protocol": "1.0", "op": "<op>", "result": {...},
     "metadata": {"model": ..., "preprocessing": ..., "latency_ms": ...}}

The client refuses servers whose protocol major version differs, retries
transient failures (connection errors, 5xx) with backoff, and surfaces
schema violations immediately.
"""

from __future__ import annotations

import base64
import logging
import time

import numpy as np
import requests

from .errors import ProtocolError, SidecarError
from .types import ExpertKind, l2_normalize

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "1.0"
MAX_PAYLOAD_BYTES = 20 * 1024 * 1024

OPS = ("embed_image", "embed_text", "describe", "expand_keywords", "propose",
       "validate", "revise_prompt")


def _major(version: str) -> str:
    return str(version).split(".", 1)[0]


class SidecarClient:
    def __init__(self, base_url: str, timeout: float = 60.0, retries: int = 2,
                 backoff: float = 0.2):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session = requests.Session()

    # ----- transport -----------------------------------------------------

    def _post(self, op: str, payload: dict) -> dict:
        if op not in OPS:
            raise ProtocolError(f"unknown sidecar op {op!r}")
        body = {"protocol": PROTOCOL_VERSION, "op": op, "payload": payload}
        url = f"{self.base_url}/v1/{op}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("sidecar %s attempt %d failed: %s", op, attempt + 1, exc)
                time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code == 400:
                raise ProtocolError(f"sidecar rejected {op} request: {resp.text}")
            if resp.status_code >= 500:
                last_error = SidecarError(f"{op}: server error {resp.status_code}")
                time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code != 200:
                raise SidecarError(f"{op}: unexpected status {resp.status_code}")
            doc = resp.json()
            if _major(doc.get("protocol", "")) != _major(PROTOCOL_VERSION):
                raise ProtocolError(
                    f"sidecar protocol {doc.get('protocol')!r} incompatible with "
                    f"{PROTOCOL_VERSION}"
                )
            if "result" not in doc:
                raise ProtocolError(f"{op}: response has no result")
            return doc["result"]
        raise SidecarError(f"sidecar {op} failed after {self.retries + 1} attempts: {last_error}")

    def health(self) -> dict:
        try:
            resp = self._session.get(f"{self.base_url}/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise SidecarError(f"sidecar unreachable: {exc}") from exc
        doc = resp.json()
        if _major(doc.get("protocol", "")) != _major(PROTOCOL_VERSION):
            raise ProtocolError(f"sidecar protocol {doc.get('protocol')!r} incompatible")
        return doc

    @staticmethod
    def _image_field(data: bytes) -> str:
        if len(data) > MAX_PAYLOAD_BYTES:
            raise ProtocolError(f"image payload {len(data)} bytes exceeds {MAX_PAYLOAD_BYTES}")
        return base64.b64encode(data).decode("ascii")

    # ----- embedding ops ---------------------------------------------------

    def _vector(self, result: dict, expert: ExpertKind) -> np.ndarray:
        vec = result.get("vector")
        if not isinstance(vec, list) or result.get("dim") != expert.dim or len(vec) != expert.dim:
            raise ProtocolError(
                f"expected a {expert.dim}-dim vector for {expert.value}, "
                f"got dim={result.get('dim')} len={len(vec) if isinstance(vec, list) else '?'}"
            )
        arr = np.asarray(vec, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ProtocolError(f"non-finite embedding values for {expert.value}")
        return l2_normalize(arr)

    def embed_image(self, data: bytes, expert: ExpertKind) -> np.ndarray:
        if expert == ExpertKind.CLIP_TEXT:
            raise ProtocolError("clip_text is a text expert")
        result = self._post("embed_image", {
            "image_b64": self._image_field(data), "expert": expert.value,
        })
        return self._vector(result, expert)

    def embed_text(self, text: str) -> np.ndarray:
        result = self._post("embed_text", {
            "text": text, "expert": ExpertKind.CLIP_TEXT.value,
        })
        return self._vector(result, ExpertKind.CLIP_TEXT)

    # ----- VLM ops ---------------------------------------------------------

    def describe(self, image: bytes, prompt: str) -> str:
        result = self._post("describe", {
            "image_b64": self._image_field(image), "prompt": prompt,
        })
        text = result.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ProtocolError("describe returned no text")
        return text

    def expand_keywords(self, images: list[bytes], prompt: str, channel: str) -> list[str]:
        result = self._post("expand_keywords", {
            "images_b64": [self._image_field(i) for i in images],
            "prompt": prompt,
            "channel": channel,
        })
        keywords = result.get("keywords")
        if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
            raise ProtocolError("expand_keywords returned no keyword list")
        return keywords

    def propose(self, image: bytes, prompt: str, grids: dict[str, list[tuple[int, int, int, int]]],
                traces: tuple[str, ...]) -> dict:
        result = self._post("propose", {
            "image_b64": self._image_field(image),
            "prompt": prompt,
            "grids": {g: [list(b) for b in boxes] for g, boxes in grids.items()},
            "traces": list(traces),
        })
        proposal = result.get("proposal")
        if not isinstance(proposal, dict):
            raise ProtocolError("propose returned no proposal object")
        return proposal

    def validate(self, image: bytes, prompt: str, scope: str, categories: list[str],
                 traces: tuple[str, ...],
                 regions: list[tuple[int, int, int, int]] | None = None) -> dict:
        payload = {
            "image_b64": self._image_field(image),
            "prompt": prompt,
            "scope": scope,
            "categories": list(categories),
            "traces": list(traces),
        }
        if regions is not None:
            payload["regions"] = [list(r) for r in regions]
        result = self._post("validate", payload)
        if not isinstance(result.get("category"), str):
            raise ProtocolError("validate returned no category")
        return result

    def revise_prompt(self, prompt: str, feedback: str) -> str:
        result = self._post("revise_prompt", {"prompt": prompt, "feedback": feedback})
        text = result.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ProtocolError("revise_prompt returned no text")
        return text
