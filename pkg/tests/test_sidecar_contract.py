"""Engine client against a live sidecar process (wire-contract check).

Skipped when the sidecar package is not installed; the engine's own suite
stays hermetic without it.
"""

import numpy as np
import pytest

winnow_sidecar = pytest.importorskip("winnow_sidecar")

from winnow.errors import ProtocolError  # noqa: E402
from winnow.revlm import GRANULARITIES, Granularity, make_grid  # noqa: E402
from winnow.sidecar_client import SidecarClient  # noqa: E402
from winnow.types import ExpertKind  # noqa: E402

IMAGE = b"fake image payload for the contract test"
TRACES = ("rust", "dust and sand", "mold", "aged", "none")


@pytest.fixture(scope="module")
def client():
    server, _ = winnow_sidecar.start_background(winnow_sidecar.MockBackend())
    yield SidecarClient(f"http://127.0.0.1:{server.server_port}")
    server.shutdown()
    server.server_close()


class TestWireContract:
    def test_health(self, client):
        doc = client.health()
        assert doc["mode"] == "mock"

    def test_embeddings_unit_and_deterministic(self, client):
        for expert in (ExpertKind.CLIP_IMAGE, ExpertKind.DINOV2, ExpertKind.BEIT):
            a = client.embed_image(IMAGE, expert)
            b = client.embed_image(IMAGE, expert)
            assert a.shape == (expert.dim,)
            assert np.array_equal(a, b)
            assert abs(float(np.linalg.norm(a.astype(np.float64))) - 1.0) < 1e-5
        t = client.embed_text("rusty seat track")
        assert t.shape == (768,)

    def test_describe_and_revise(self, client):
        text = client.describe(IMAGE, "what part is this?")
        assert text
        revised = client.revise_prompt("initial", "## retain-worthy traits\n(none)")
        assert revised

    def test_expand_keywords_both_channels(self, client):
        visual = client.expand_keywords([IMAGE], "seat belt", "visual")
        textual = client.expand_keywords([], "seat belt", "text")
        assert visual and textual and visual != textual

    def test_propose_parses_against_engine_grids(self, client):
        grids = {g: make_grid(64, 48, g) for g in GRANULARITIES}
        raw = client.propose(
            IMAGE, "prompt",
            {g.value: [b.as_tuple() for b in grid.boxes] for g, grid in grids.items()},
            TRACES)
        from winnow.revlm import parse_proposer_response
        out, notes = parse_proposer_response(raw, TRACES)
        assert out.subject_indices[Granularity.G3]
        assert notes == []

    def test_validate_both_scopes(self, client):
        global_v = client.validate(IMAGE, "p", "global", ["A", "B"], TRACES)
        local_v = client.validate(IMAGE, "p", "local", ["A", "B"], TRACES,
                                  regions=[(0, 0, 8, 8)])
        assert global_v["category"] in ("A", "B")
        assert local_v["category"] in ("A", "B")

    def test_oversized_payload_rejected_client_side(self, client):
        with pytest.raises(ProtocolError, match="exceeds"):
            client.embed_image(b"x" * (20 * 1024 * 1024 + 1), ExpertKind.CLIP_IMAGE)
