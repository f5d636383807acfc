"""Quality-aware qualification pipeline for augmented multimodal feature corpora.

Forge synthetic negatives, train a quality scorer over pooled modality
features, map scores to sample weights, and run weighted fine-tuning of a
small surrogate task head - all deterministic from explicit seeds.
"""

__version__ = "0.1.0"

from .util import AugqualError, ChecksumError, PipelineError, ValidationError

__all__ = [
    "__version__",
    "AugqualError",
    "ValidationError",
    "ChecksumError",
    "PipelineError",
]
