"""Fair adapter tuning for frozen node embeddings, with per-node fairness certificates."""

from .augmenter import SensitiveDirection, compute_direction
from .data import DatasetError, EmbeddingDataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .pipeline import FairnessReport, PipelineError, RunConfig, default_synthetic_spec, run
from .smoothing import NodeCertificate, SmoothingConfig, certify_node
from .training import TrainConfig, harden_classifier, train

__version__ = "0.1.0"

__all__ = [
    "DatasetError",
    "EmbeddingDataset",
    "FairnessReport",
    "NodeCertificate",
    "PipelineError",
    "RunConfig",
    "SensitiveDirection",
    "SmoothingConfig",
    "SyntheticSpec",
    "TrainConfig",
    "certify_node",
    "compute_direction",
    "default_synthetic_spec",
    "generate_synthetic",
    "harden_classifier",
    "load_dataset",
    "run",
    "save_dataset",
    "train",
]
