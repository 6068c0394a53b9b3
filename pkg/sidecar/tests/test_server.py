"""Sidecar acceptance: schema conformance for all ops, mock determinism."""

import base64
import json

import jsonschema
import pytest
import requests

from winnow_sidecar.mock_backend import MockBackend, content_hash
from winnow_sidecar.protocol import OPS, PROTOCOL_VERSION, RESULT_SCHEMAS
from winnow_sidecar.server import start_background

IMAGE = b"\x89PNG fake image bytes for testing \x00\x01\x02"
IMAGE_B64 = base64.b64encode(IMAGE).decode("ascii")

GRIDS = {
    "3x3": [[c * 10, r * 10, 10, 10] for r in range(3) for c in range(3)],
    "4x4": [[c * 8, r * 8, 8, 8] for r in range(4) for c in range(4)],
}
TRACES = ["rust", "dust and sand", "mold", "aged", "none"]


def sample_payload(op: str) -> dict:
    return {
        "embed_image": {"image_b64": IMAGE_B64, "expert": "clip_image"},
        "embed_text": {"text": "a flooded seat track", "expert": "clip_text"},
        "describe": {"image_b64": IMAGE_B64, "prompt": "describe the part"},
        "expand_keywords": {"images_b64": [IMAGE_B64], "prompt": "seat belt",
                            "channel": "visual"},
        "propose": {"image_b64": IMAGE_B64, "prompt": "p", "grids": GRIDS,
                    "traces": TRACES},
        "validate": {"image_b64": IMAGE_B64, "prompt": "p", "scope": "global",
                     "categories": ["A", "B"], "traces": TRACES},
        "revise_prompt": {"prompt": "initial", "feedback": "## retain-worthy traits"},
    }[op]


@pytest.fixture(scope="module")
def server_url():
    server, _ = start_background(MockBackend())
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    server.server_close()


def call(url, op, payload, protocol=PROTOCOL_VERSION):
    return requests.post(f"{url}/v1/{op}", json={
        "protocol": protocol, "op": op, "payload": payload,
    }, timeout=10)


class TestSchemaConformance:
    @pytest.mark.parametrize("op", OPS)
    def test_all_seven_ops_round_trip(self, server_url, op):
        resp = call(server_url, op, sample_payload(op))
        assert resp.status_code == 200, resp.text
        doc = resp.json()
        assert doc["protocol"] == PROTOCOL_VERSION
        assert doc["op"] == op
        jsonschema.validate(doc["result"], RESULT_SCHEMAS[op])
        meta = doc["metadata"]
        assert meta["model"]
        assert "preprocessing" in meta
        assert meta["latency_ms"] >= 0

    @pytest.mark.parametrize("op", OPS)
    def test_missing_required_field_is_400(self, server_url, op):
        payload = sample_payload(op)
        payload.pop(sorted(payload)[0])
        resp = call(server_url, op, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "schema"

    def test_embed_dims_match_expert(self, server_url):
        for expert, dim in (("clip_image", 768), ("dinov2", 1024), ("beit", 1024)):
            resp = call(server_url, "embed_image",
                        {"image_b64": IMAGE_B64, "expert": expert})
            doc = resp.json()["result"]
            assert doc["dim"] == dim == len(doc["vector"])
            norm = sum(x * x for x in doc["vector"]) ** 0.5
            assert abs(norm - 1.0) < 1e-5

    def test_unknown_expert_rejected(self, server_url):
        resp = call(server_url, "embed_image",
                    {"image_b64": IMAGE_B64, "expert": "resnet"})
        assert resp.status_code == 400

    def test_protocol_major_mismatch_rejected(self, server_url):
        resp = call(server_url, "describe", sample_payload("describe"), protocol="2.0")
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "protocol"

    def test_unknown_op_404(self, server_url):
        resp = requests.post(f"{server_url}/v1/transmogrify", json={
            "protocol": PROTOCOL_VERSION, "op": "transmogrify", "payload": {}},
            timeout=10)
        assert resp.status_code == 404

    def test_invalid_base64_rejected(self, server_url):
        resp = call(server_url, "describe",
                    {"image_b64": "!!! not base64 !!!", "prompt": "p"})
        assert resp.status_code == 400

    def test_bad_json_body_400(self, server_url):
        resp = requests.post(f"{server_url}/v1/describe", data=b"{nope",
                             headers={"Content-Type": "application/json"}, timeout=10)
        assert resp.status_code == 400

    def test_health_reports_models(self, server_url):
        doc = requests.get(f"{server_url}/v1/health", timeout=10).json()
        assert doc["protocol"] == PROTOCOL_VERSION
        assert doc["mode"] == "mock"
        assert set(doc["models"]) >= {"clip_image", "clip_text", "dinov2", "beit"}

    def test_text_truncation_flagged(self, server_url):
        resp = call(server_url, "embed_text",
                    {"text": "x" * 4000, "expert": "clip_text"})
        assert resp.json()["result"]["truncated"] is True


class TestMockDeterminism:
    def test_identical_inputs_identical_vectors_across_restarts(self):
        vectors = []
        for _ in range(2):
            server, _ = start_background(MockBackend())
            url = f"http://127.0.0.1:{server.server_port}"
            try:
                out = {}
                for expert in ("clip_image", "dinov2", "beit"):
                    out[expert] = call(url, "embed_image", {
                        "image_b64": IMAGE_B64, "expert": expert}).json()["result"]
                out["text"] = call(url, "embed_text", {
                    "text": "rusty seat track", "expert": "clip_text"}).json()["result"]
                out["describe"] = call(url, "describe", sample_payload("describe")).json()["result"]
                vectors.append(out)
            finally:
                server.shutdown()
                server.server_close()
        assert vectors[0] == vectors[1]

    def test_different_inputs_differ(self, server_url):
        a = call(server_url, "embed_image",
                 {"image_b64": IMAGE_B64, "expert": "clip_image"}).json()["result"]
        other = base64.b64encode(IMAGE + b"!").decode("ascii")
        b = call(server_url, "embed_image",
                 {"image_b64": other, "expert": "clip_image"}).json()["result"]
        assert a["vector"] != b["vector"]

    def test_image_and_text_spaces_differ(self, server_url):
        img = call(server_url, "embed_image",
                   {"image_b64": base64.b64encode(b"same").decode(), "expert": "clip_image"})
        txt = call(server_url, "embed_text", {"text": "same", "expert": "clip_text"})
        assert img.json()["result"]["vector"] != txt.json()["result"]["vector"]


class TestFixtureScript:
    def test_scripted_outputs_override_defaults(self, tmp_path):
        key = content_hash(IMAGE)
        fixtures = {
            "describe": {key: "a rusty seat track, heavily corroded"},
            "validate": {f"{key}:global": {"category": "B", "traces": ["rust"]},
                         "*:local": {"category": "B", "traces": []}},
            "propose": {"*": {
                "3x3": {"subject": [4], "flags": [{"rust": j == 4} for j in range(9)]},
                "4x4": {"subject": [0], "flags": [{} for _ in range(16)]},
            }},
            "expand_keywords": {"visual": ["kw one", "kw two"]},
            "revise_prompt": {"*": "scripted revision"},
        }
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps(fixtures), encoding="utf-8")
        server, _ = start_background(MockBackend.from_fixture_file(path))
        url = f"http://127.0.0.1:{server.server_port}"
        try:
            assert call(url, "describe", sample_payload("describe")).json()["result"][
                "text"] == "a rusty seat track, heavily corroded"
            proposal = call(url, "propose", sample_payload("propose")).json()["result"][
                "proposal"]
            assert proposal["3x3"]["subject"] == [4]
            verdict = call(url, "validate", sample_payload("validate")).json()["result"]
            assert verdict == {"category": "B", "traces": ["rust"]}
            kws = call(url, "expand_keywords", sample_payload("expand_keywords")).json()[
                "result"]["keywords"]
            assert kws == ["kw one", "kw two"]
            assert call(url, "revise_prompt", sample_payload("revise_prompt")).json()[
                "result"]["text"] == "scripted revision"
        finally:
            server.shutdown()
            server.server_close()
