"""Corner-case dataset curation engine.

Three stages turn a noisy image manifest into a high-precision labeled
dataset: trimodal similarity filtering with human cluster triage, expert
kNN distillation with confidence gating and uncertainty escalation, and
region-evidence semantic relabeling. All model inference is delegated to a
sidecar service over HTTP.
"""

from .config import PipelineConfig
from .metrics import EvalReference, macro_prf, nrr_cdrr, perfect_match
from .moe import MixtureOfExpertsClassifier
from .project import Project
from .types import LabelSpace, Sample, Stage, Status

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "Project",
    "Sample",
    "Status",
    "Stage",
    "LabelSpace",
    "MixtureOfExpertsClassifier",
    "EvalReference",
    "macro_prf",
    "nrr_cdrr",
    "perfect_match",
    "__version__",
]
