"""Multi-modal biometric verification toolkit.

Feature extraction with a partially shared neural backbone, PCA-based fusion
of the concatenated per-modality features, and a gradient-boosted verifier on
absolute feature differences.
"""

from .config import PipelineConfig, desk, load_config
from .pipeline import (ExperimentReport, authenticate, evaluate_bundle,
                       train_pipeline)
from .serialize import PipelineBundle, load_bundle, save_bundle

__version__ = "0.1.0"

__all__ = [
    "ExperimentReport",
    "PipelineBundle",
    "PipelineConfig",
    "authenticate",
    "desk",
    "evaluate_bundle",
    "load_bundle",
    "load_config",
    "save_bundle",
    "train_pipeline",
    "__version__",
]
