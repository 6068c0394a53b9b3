"""Deterministic mock model backend.

Embeddings are unit vectors drawn from a PCG64 stream seeded by a blake2b
hash of (expert, input bytes), so identical inputs produce identical
vectors on every platform and across restarts — no model download needed.
VLM ops return canned outputs, optionally overridden by a fixture script
keyed by the input image's content hash.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .protocol import EXPERT_DIMS

TEXT_TRUNCATE_CHARS = 512


def content_hash(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=16).hexdigest()


def _stream_seed(*parts: bytes) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part)
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _unit_vector(seed: int, dim: int) -> list[float]:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v = (v / np.linalg.norm(v)).astype(np.float32)
    return [float(x) for x in v]


class MockBackend:
    """Scripted, fully deterministic stand-in for the real model stack.

    `fixtures` maps op name to a dict of responses. Image-keyed ops look up
    the image content hash (32 hex chars), falling back to "*"; `validate`
    keys carry the scope suffix (e.g. "<hash>:local", "*:global").
    """

    mode = "mock"

    models = {
        "clip_image": "mock/clip-image-768",
        "clip_text": "mock/clip-text-768",
        "dinov2": "mock/dinov2-1024",
        "beit": "mock/beit-1024",
        "vlm": "mock/scripted-vlm",
    }

    preprocessing = "identity (mock mode: no resize/crop applied)"

    def __init__(self, fixtures: dict | None = None):
        self.fixtures = fixtures or {}

    @classmethod
    def from_fixture_file(cls, path: Path) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _scripted(self, op: str, key: str):
        table = self.fixtures.get(op, {})
        if key in table:
            return table[key]
        return table.get("*")

    # -- embeddings --------------------------------------------------------

    def embed_image(self, data: bytes, expert: str) -> dict:
        dim = EXPERT_DIMS[expert]
        seed = _stream_seed(expert.encode("ascii"), data)
        return {"vector": _unit_vector(seed, dim), "dim": dim}

    def embed_text(self, text: str, expert: str) -> dict:
        truncated = len(text) > TEXT_TRUNCATE_CHARS
        clipped = text[:TEXT_TRUNCATE_CHARS]
        dim = EXPERT_DIMS[expert]
        seed = _stream_seed(expert.encode("ascii"), clipped.encode("utf-8"))
        return {"vector": _unit_vector(seed, dim), "dim": dim, "truncated": truncated}

    # -- VLM ops ------------------------------------------------------------

    def describe(self, data: bytes, prompt: str) -> dict:
        key = content_hash(data)
        scripted = self._scripted("describe", key)
        if scripted is not None:
            return {"text": scripted}
        return {"text": f"mock description of image {key[:12]} "
                        f"(prompt {content_hash(prompt.encode())[:8]})"}

    def expand_keywords(self, images: list[bytes], prompt: str, channel: str) -> dict:
        scripted = self.fixtures.get("expand_keywords", {}).get(channel)
        if scripted is not None:
            return {"keywords": list(scripted)}
        stem = content_hash(prompt.encode("utf-8"))[:6]
        return {"keywords": [f"{prompt} {channel} variant {stem}-{i}" for i in range(3)]}

    def propose(self, data: bytes, prompt: str, grids: dict, traces: list[str]) -> dict:
        key = content_hash(data)
        scripted = self._scripted("propose", key)
        if scripted is not None:
            return {"proposal": scripted}
        proposal = {}
        for gran, boxes in grids.items():
            n = len(boxes)
            proposal[gran] = {
                "subject": list(range(n)),
                "flags": [{t: t == "none" for t in traces} for _ in range(n)],
            }
        return {"proposal": proposal}

    def validate(self, data: bytes, prompt: str, scope: str, categories: list[str],
                 traces: list[str], regions=None) -> dict:
        key = f"{content_hash(data)}:{scope}"
        scripted = self._scripted("validate", key)
        if scripted is None:
            scripted = self.fixtures.get("validate", {}).get(f"*:{scope}")
        if scripted is not None:
            return dict(scripted)
        return {"category": categories[0], "traces": []}

    def revise_prompt(self, prompt: str, feedback: str) -> dict:
        scripted = self._scripted("revise_prompt", "*")
        if scripted is not None:
            return {"text": scripted}
        return {"text": f"{prompt} (revised against triage feedback "
                        f"{content_hash(feedback.encode())[:8]})"}
