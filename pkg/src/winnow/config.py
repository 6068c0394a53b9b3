"""Project configuration: flat key/value text with one section per module.

Unknown sections or keys are hard errors so typos can't silently fall back
to defaults. The 64-bit hash of the canonical serialization pins cached
round outputs to the configuration that produced them.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .types import ClassDef, LabelSpace

DEFAULT_CLASSES = (
    ClassDef("A", "seat belt"),
    ClassDef("B", "seat track"),
    ClassDef("C", "wiring harness"),
    ClassDef("D", "spare tire well"),
    ClassDef("E", "foam padding"),
    ClassDef("F", "12V power outlet"),
    ClassDef("G", "steering column"),
    ClassDef("H", "noise"),
)

DEFAULT_TRACES = ("rust", "dust and sand", "mold", "aged", "none")


@dataclass
class PipelineConfig:
    # [filter]
    weight_img_desc: float = 0.5
    weight_desc_kw: float = 0.3
    weight_img_kw: float = 0.2
    similarity_threshold: float = 0.4
    triage_per_cluster: int = 5
    triage_strong_min: float = 0.8
    triage_discard_max: float = 0.2
    cluster_min_size: int = 15
    cluster_min_samples: int = 5
    max_rounds_filter: int = 12
    keywords_per_channel: int = 20
    prompt_exemplars_per_bucket: int = 3
    # [distill]
    neighbors: int = 7
    temperature: float = 0.07
    topic_threshold: float = 0.65
    label_threshold: float = 0.45
    topic_conf_expert: str = "clip"
    low_fas_fraction: float = 0.20
    low_fas_draws: int = 3
    boundary_draws: int = 3
    max_rounds_distill: int = 5
    plateau_epsilon: float = 0.0
    escalation_budget: float | None = None
    # [relabel]
    region_support_min: int = 2
    # [project]
    rng_seed: int = 20260809
    sidecar_url: str = "http://127.0.0.1:8601"
    initial_prompt: str = "Describe the pictured part and any visible damage traces."
    # [labels]
    classes: tuple[ClassDef, ...] = DEFAULT_CLASSES
    noise_class: str = "H"
    traces: tuple[str, ...] = DEFAULT_TRACES
    synonyms: dict[str, str] = field(default_factory=dict)

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.weight_img_desc, self.weight_desc_kw, self.weight_img_kw)

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace(classes=self.classes, noise_class=self.noise_class,
                          traces=self.traces)

    def validate(self) -> None:
        if abs(sum(self.weights) - 1.0) > 1e-6 or min(self.weights) < 0:
            raise ConfigError(f"fusion weights must be non-negative and sum to 1: {self.weights}")
        for name in ("topic_threshold", "label_threshold"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {v}")
        if not 0 < self.low_fas_fraction <= 1:
            raise ConfigError(f"low_fas_fraction must lie in (0, 1], got {self.low_fas_fraction}")
        if not 0 <= self.triage_discard_max < self.triage_strong_min <= 1:
            raise ConfigError("triage thresholds must satisfy 0 <= discard < strong <= 1")
        for name in ("neighbors", "triage_per_cluster", "cluster_min_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("low_fas_draws", "boundary_draws", "region_support_min",
                     "max_rounds_filter", "max_rounds_distill"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.escalation_budget is not None and not 0 < self.escalation_budget <= 1:
            raise ConfigError("escalation_budget must lie in (0, 1] when set")
        if self.plateau_epsilon < 0:
            raise ConfigError("plateau_epsilon must be >= 0")
        if self.topic_conf_expert not in ("clip", "dinov2", "beit"):
            raise ConfigError(f"unknown topic_conf_expert {self.topic_conf_expert!r}")
        self.label_space  # raises on inconsistent classes/noise


_SCHEMA: dict[str, dict[str, str]] = {
    "filter": {
        "weight_img_desc": "float", "weight_desc_kw": "float", "weight_img_kw": "float",
        "similarity_threshold": "float", "triage_per_cluster": "int",
        "triage_strong_min": "float", "triage_discard_max": "float",
        "cluster_min_size": "int", "cluster_min_samples": "int",
        "max_rounds": "int", "keywords_per_channel": "int",
        "prompt_exemplars_per_bucket": "int",
    },
    "distill": {
        "neighbors": "int", "temperature": "float", "topic_threshold": "float",
        "label_threshold": "float", "topic_conf_expert": "str",
        "low_fas_fraction": "float", "low_fas_draws": "int", "boundary_draws": "int",
        "max_rounds": "int", "plateau_epsilon": "float", "escalation_budget": "optfloat",
    },
    "relabel": {
        "region_support_min": "int", "traces": "list",
    },
    "project": {
        "rng_seed": "int", "sidecar_url": "str", "initial_prompt": "str",
    },
    "labels": {
        "classes": "classes", "noise_class": "str", "synonyms": "pairs",
    },
}

_FIELD_FOR = {
    ("filter", "max_rounds"): "max_rounds_filter",
    ("distill", "max_rounds"): "max_rounds_distill",
}


def _parse_value(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optfloat":
            return float(raw) if raw else None
        if kind == "str":
            return raw
        if kind == "list":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if kind == "classes":
            classes = []
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                if ":" not in part:
                    raise ValueError(f"class entry {part!r} must be id:display name")
                cid, name = part.split(":", 1)
                classes.append(ClassDef(cid.strip(), name.strip()))
            return tuple(classes)
        if kind == "pairs":
            pairs = {}
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                if "=" not in part:
                    raise ValueError(f"synonym entry {part!r} must be term=canonical")
                term, canonical = part.split("=", 1)
                pairs[term.strip().lower()] = canonical.strip().lower()
            return pairs
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unhandled value kind {kind}")


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            value = _parse_value(_SCHEMA[section][key], raw, f"[{section}] {key}")
            setattr(cfg, _FIELD_FOR.get((section, key), key), value)
    cfg.validate()
    return cfg


def load_config(path: Path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def render_config(cfg: PipelineConfig) -> str:
    """Canonical serialization; also the form the config hash is taken over."""
    buf = io.StringIO()

    def emit(section: str, pairs: list[tuple[str, str]]) -> None:
        buf.write(f"[{section}]\n")
        for key, value in pairs:
            buf.write(f"{key} = {value}\n")
        buf.write("\n")

    emit("filter", [
        ("weight_img_desc", repr(cfg.weight_img_desc)),
        ("weight_desc_kw", repr(cfg.weight_desc_kw)),
        ("weight_img_kw", repr(cfg.weight_img_kw)),
        ("similarity_threshold", repr(cfg.similarity_threshold)),
        ("triage_per_cluster", str(cfg.triage_per_cluster)),
        ("triage_strong_min", repr(cfg.triage_strong_min)),
        ("triage_discard_max", repr(cfg.triage_discard_max)),
        ("cluster_min_size", str(cfg.cluster_min_size)),
        ("cluster_min_samples", str(cfg.cluster_min_samples)),
        ("max_rounds", str(cfg.max_rounds_filter)),
        ("keywords_per_channel", str(cfg.keywords_per_channel)),
        ("prompt_exemplars_per_bucket", str(cfg.prompt_exemplars_per_bucket)),
    ])
    emit("distill", [
        ("neighbors", str(cfg.neighbors)),
        ("temperature", repr(cfg.temperature)),
        ("topic_threshold", repr(cfg.topic_threshold)),
        ("label_threshold", repr(cfg.label_threshold)),
        ("topic_conf_expert", cfg.topic_conf_expert),
        ("low_fas_fraction", repr(cfg.low_fas_fraction)),
        ("low_fas_draws", str(cfg.low_fas_draws)),
        ("boundary_draws", str(cfg.boundary_draws)),
        ("max_rounds", str(cfg.max_rounds_distill)),
        ("plateau_epsilon", repr(cfg.plateau_epsilon)),
        ("escalation_budget", "" if cfg.escalation_budget is None else repr(cfg.escalation_budget)),
    ])
    emit("relabel", [
        ("region_support_min", str(cfg.region_support_min)),
        ("traces", ", ".join(cfg.traces)),
    ])
    emit("project", [
        ("rng_seed", str(cfg.rng_seed)),
        ("sidecar_url", cfg.sidecar_url),
        ("initial_prompt", cfg.initial_prompt),
    ])
    emit("labels", [
        ("classes", ", ".join(f"{c.id}:{c.name}" for c in cfg.classes)),
        ("noise_class", cfg.noise_class),
        ("synonyms", ", ".join(f"{k}={v}" for k, v in sorted(cfg.synonyms.items()))),
    ])
    return buf.getvalue()


DEFAULT_CONFIG_HEADER = """\
# Curation pipeline configuration.
#
# [filter]   stage-1 trimodal filtering and cluster triage
#   weight_img_desc/desc_kw/img_kw  fusion weights, must sum to 1
#   similarity_threshold            fused-score split point (boundary stays high)
#   triage_per_cluster              images human-labeled per cluster
#   triage_strong_min/discard_max   bucket thresholds on mean relevance
#   cluster_min_size/min_samples    density clustering parameters
#   max_rounds                      filter iterations before the stage ends
#   keywords_per_channel            cap per keyword-expansion channel
#   prompt_exemplars_per_bucket     descriptions quoted per bucket in feedback
# [distill]  stage-2 expert voting and confidence gating
#   neighbors                       K nearest neighbors per expert
#   temperature                     softmax temperature over similarities
#   topic_threshold/label_threshold dual-confidence gate (inclusive)
#   topic_conf_expert               expert whose mean neighbor sim gates topics
#   low_fas_fraction                bottom fraction per class eligible for review
#   low_fas_draws/boundary_draws    review draws per class / global boundary picks
#   max_rounds                      distill iterations before finalize
#   plateau_epsilon                 early stop when accepted-set change stays below
#                                   this fraction twice (0 disables)
#   escalation_budget               optional cap on escalated fraction per round
# [relabel]  stage-3 region-evidence semantic labeling
#   region_support_min              subject cells needed to admit a local-only trace
#   traces                          closed trace vocabulary (must include "none")
# [project]
#   rng_seed                        root seed; all step randomness derives from it
#   sidecar_url                     model sidecar endpoint
#   initial_prompt                  first description prompt, revised each round
# [labels]
#   classes                         id:display name, comma separated; order fixes
#                                   argmax tie-breaking
#   noise_class                     id of the off-topic class
#   synonyms                        term=canonical pairs for semantic evaluation

"""


def config_hash(cfg: PipelineConfig) -> str:
    digest = hashlib.blake2b(render_config(cfg).encode("utf-8"), digest_size=8)
    return digest.hexdigest()
