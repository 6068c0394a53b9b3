"""Wire contract: envelope and per-op payload/result schemas.

Every request is `POST /v1/<op>` with::

    {"protocol": "1.0", "op": "<op>", "payload": {...}}

and every success response is::

    {"protocol": "1.0", "op": "<op>", "result": {...},
     "metadata": {"model": ..., "preprocessing": ..., "latency_ms": ...}}

Schema violations are rejected with HTTP 400 and an error code; backend
failures return 502 with a retry-after hint. Clients must refuse servers
whose protocol major version differs.
"""

from __future__ import annotations

PROTOCOL_VERSION = "1.0"

MAX_PAYLOAD_BYTES = 20 * 1024 * 1024

EXPERT_DIMS = {
    "clip_image": 768,
    "clip_text": 768,
    "dinov2": 1024,
    "beit": 1024,
}

_B64 = {"type": "string", "contentEncoding": "base64"}
_BOX = {
    "type": "array", "items": {"type": "integer"},
    "minItems": 4, "maxItems": 4,
}

PAYLOAD_SCHEMAS: dict[str, dict] = {
    "embed_image": {
        "type": "object",
        "properties": {
            "image_b64": _B64,
            "expert": {"enum": ["clip_image", "dinov2", "beit"]},
        },
        "required": ["image_b64", "expert"],
        "additionalProperties": False,
    },
    "embed_text": {
        "type": "object",
        "properties": {
            "text": {"type": "string", "minLength": 1},
            "expert": {"enum": ["clip_text"]},
        },
        "required": ["text", "expert"],
        "additionalProperties": False,
    },
    "describe": {
        "type": "object",
        "properties": {
            "image_b64": _B64,
            "prompt": {"type": "string"},
        },
        "required": ["image_b64", "prompt"],
        "additionalProperties": False,
    },
    "expand_keywords": {
        "type": "object",
        "properties": {
            "images_b64": {"type": "array", "items": _B64},
            "prompt": {"type": "string"},
            "channel": {"enum": ["visual", "text"]},
        },
        "required": ["images_b64", "prompt", "channel"],
        "additionalProperties": False,
    },
    "propose": {
        "type": "object",
        "properties": {
            "image_b64": _B64,
            "prompt": {"type": "string"},
            "grids": {
                "type": "object",
                "properties": {
                    "3x3": {"type": "array", "items": _BOX, "minItems": 9, "maxItems": 9},
                    "4x4": {"type": "array", "items": _BOX, "minItems": 16, "maxItems": 16},
                },
                "required": ["3x3", "4x4"],
                "additionalProperties": False,
            },
            "traces": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        },
        "required": ["image_b64", "prompt", "grids", "traces"],
        "additionalProperties": False,
    },
    "validate": {
        "type": "object",
        "properties": {
            "image_b64": _B64,
            "prompt": {"type": "string"},
            "scope": {"enum": ["global", "local"]},
            "categories": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "traces": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "regions": {"type": "array", "items": _BOX},
        },
        "required": ["image_b64", "prompt", "scope", "categories", "traces"],
        "additionalProperties": False,
    },
    "revise_prompt": {
        "type": "object",
        "properties": {
            "prompt": {"type": "string", "minLength": 1},
            "feedback": {"type": "string"},
        },
        "required": ["prompt", "feedback"],
        "additionalProperties": False,
    },
}

_VECTOR_RESULT = {
    "type": "object",
    "properties": {
        "vector": {"type": "array", "items": {"type": "number"}},
        "dim": {"type": "integer", "minimum": 1},
    },
    "required": ["vector", "dim"],
}

_GRID_PROPOSAL = {
    "type": "object",
    "properties": {
        "subject": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "flags": {"type": "array",
                  "items": {"type": "object",
                            "additionalProperties": {"type": "boolean"}}},
    },
    "required": ["subject", "flags"],
}

RESULT_SCHEMAS: dict[str, dict] = {
    "embed_image": _VECTOR_RESULT,
    "embed_text": {
        "type": "object",
        "properties": {
            "vector": {"type": "array", "items": {"type": "number"}},
            "dim": {"type": "integer", "minimum": 1},
            "truncated": {"type": "boolean"},
        },
        "required": ["vector", "dim", "truncated"],
    },
    "describe": {
        "type": "object",
        "properties": {"text": {"type": "string", "minLength": 1}},
        "required": ["text"],
    },
    "expand_keywords": {
        "type": "object",
        "properties": {"keywords": {"type": "array", "items": {"type": "string"}}},
        "required": ["keywords"],
    },
    "propose": {
        "type": "object",
        "properties": {
            "proposal": {
                "type": "object",
                "properties": {"3x3": _GRID_PROPOSAL, "4x4": _GRID_PROPOSAL},
                "required": ["3x3", "4x4"],
            },
        },
        "required": ["proposal"],
    },
    "validate": {
        "type": "object",
        "properties": {
            "category": {"type": "string", "minLength": 1},
            "traces": {"type": "array", "items": {"type": "string"}},
        },
        "required": ["category", "traces"],
    },
    "revise_prompt": {
        "type": "object",
        "properties": {"text": {"type": "string", "minLength": 1}},
        "required": ["text"],
    },
}

OPS = tuple(PAYLOAD_SCHEMAS)


def envelope_schema(op: str) -> dict:
    return {
        "type": "object",
        "properties": {
            "protocol": {"type": "string"},
            "op": {"const": op},
            "payload": PAYLOAD_SCHEMAS[op],
        },
        "required": ["protocol", "op", "payload"],
        "additionalProperties": False,
    }


def major(version: str) -> str:
    return str(version).split(".", 1)[0]
