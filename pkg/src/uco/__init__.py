"""Centrality-aware fine-tuning of a small text encoder for product search."""

__version__ = "0.1.0"

from .datamodel import EvalSplit, GradedPair, RankedRun, ValidationError
from .encoder import EmbeddingModel, FeaturizerConfig, encode, init_model
from .trainer import TrainConfig, train

__all__ = [
    "EmbeddingModel",
    "EvalSplit",
    "FeaturizerConfig",
    "GradedPair",
    "RankedRun",
    "TrainConfig",
    "ValidationError",
    "encode",
    "init_model",
    "train",
]
