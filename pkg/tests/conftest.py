"""Shared fixtures: deterministic in-process stand-in for the model sidecar."""

from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from winnow.errors import SidecarError
from winnow.rng import derive_seed
from winnow.types import ExpertKind, content_id, l2_normalize, text_id

FAKE_SEED = 0xFACE

# Solid-color synthetic images; the fake client maps color -> semantic center.
COLOR_WORDS = {
    (220, 60, 60): "red",
    (60, 200, 60): "green",
    (70, 70, 220): "blue",
    (150, 60, 200): "purple",
    (128, 128, 128): "gray",
}

TEXT_TOKENS = {
    "part a": "red", "red": "red",
    "part b": "green", "green": "green",
    "part c": "blue", "blue": "blue",
    "purple": "purple",
}


def unit_from_seed(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return l2_normalize(rng.standard_normal(dim))


def random_units(n: int, dim: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.vstack([l2_normalize(rng.standard_normal(dim)) for _ in range(n)])


class FakeSidecarClient:
    """Deterministic sidecar double.

    Solid-color images and texts naming a color land near a shared semantic
    center per color (with content-hash jitter; `jitter` is the expected
    squared noise norm, so cosines are dimension-independent); anything else
    maps to a hash-seeded random unit vector. VLM ops are scripted via
    constructor arguments.
    """

    def __init__(self, keywords: dict[str, list[str]] | None = None,
                 proposals: dict[str, dict] | None = None,
                 verdicts: dict[str, dict] | None = None,
                 fail_ops: set[str] | None = None,
                 jitter: float = 0.15):
        self.keywords = keywords or {}
        self.proposals = proposals or {}
        self.verdicts = verdicts or {}
        self.fail_ops = fail_ops or set()
        self.jitter = jitter
        self.calls: list[str] = []

    # -- helpers ---------------------------------------------------------

    def _check(self, op: str) -> None:
        self.calls.append(op)
        if op in self.fail_ops:
            raise SidecarError(f"scripted failure for {op}")

    def _center(self, name: str, dim: int) -> np.ndarray:
        return unit_from_seed(derive_seed(FAKE_SEED, "center", name, str(dim)), dim)

    def _jittered(self, center: np.ndarray, salt: str) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(FAKE_SEED, "jitter", salt))
        dim = center.shape[0]
        sigma = np.sqrt(self.jitter / dim)
        return l2_normalize(center + sigma * rng.standard_normal(dim))

    def _image_color(self, data: bytes) -> str | None:
        try:
            with Image.open(io.BytesIO(data)) as img:
                pixel = img.convert("RGB").getpixel((0, 0))
        except Exception:
            return None
        return COLOR_WORDS.get(pixel)

    # -- embedding ops -----------------------------------------------------

    def embed_image(self, data: bytes, expert: ExpertKind) -> np.ndarray:
        self._check("embed_image")
        color = self._image_color(data)
        salt = f"{expert.value}:{content_id(data)}"
        if color is None or color == "gray":
            return unit_from_seed(derive_seed(FAKE_SEED, "rand", salt), expert.dim)
        return self._jittered(self._center(color, expert.dim), salt)

    def embed_text(self, text: str) -> np.ndarray:
        self._check("embed_text")
        lowered = text.lower()
        dim = ExpertKind.CLIP_TEXT.dim
        for token, color in TEXT_TOKENS.items():
            if token in lowered:
                return self._jittered(self._center(color, dim), f"text:{text_id(text)}")
        return unit_from_seed(derive_seed(FAKE_SEED, "rand", f"text:{text_id(text)}"), dim)

    # -- VLM ops -----------------------------------------------------------

    def describe(self, image: bytes, prompt: str) -> str:
        self._check("describe")
        color = self._image_color(image)
        if color is None or color == "gray":
            return "miscellaneous clutter, no recognizable part"
        return f"a {color} automotive part in close-up"

    def expand_keywords(self, images: list[bytes], prompt: str, channel: str) -> list[str]:
        self._check("expand_keywords")
        if channel in self.keywords:
            return list(self.keywords[channel])
        return [f"{prompt} {channel} kw{i}" for i in range(3)]

    def propose(self, image: bytes, prompt: str, grids: dict, traces) -> dict:
        self._check("propose")
        key = content_id(image)
        if key in self.proposals:
            return self.proposals[key]
        if "*" in self.proposals:
            return self.proposals["*"]
        proposal = {}
        for gran, boxes in grids.items():
            n = len(boxes)
            proposal[gran] = {
                "subject": list(range(n)),
                "flags": [{t: t == "none" for t in traces} for _ in range(n)],
            }
        return proposal

    def validate(self, image: bytes, prompt: str, scope: str, categories, traces,
                 regions=None) -> dict:
        self._check("validate")
        key = f"{content_id(image)}:{scope}"
        if key in self.verdicts:
            return self.verdicts[key]
        if f"*:{scope}" in self.verdicts:
            return self.verdicts[f"*:{scope}"]
        color = self._image_color(image)
        category = {"red": "A", "green": "B", "blue": "C"}.get(color or "", categories[0])
        return {"category": category, "traces": []}

    def revise_prompt(self, prompt: str, feedback: str) -> str:
        self._check("revise_prompt")
        return f"{prompt} [refined from triage feedback]"


@pytest.fixture
def fake_client() -> FakeSidecarClient:
    return FakeSidecarClient()


_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::", 1)[1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome.upper():>6}  {name}")
