"""Error-correcting networks for learning from structured label noise.

Sequence tagging (linear-chain CRF base model) and dense grid labelling
(patch classifier base model), synthetic data generators, corruption
generators, comparison strategies and an experiment CLI.
"""
from .core import Dataset, GridSample, SequenceSample, TagSet
from .corruption import CorruptionSpec, apply_corruption
from .ecn import EcnTrainConfig, RelevantSubsetSpec, ecn_correct, ecn_pipeline, ecn_train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "GridSample", "SequenceSample", "TagSet",
    "CorruptionSpec", "apply_corruption",
    "EcnTrainConfig", "RelevantSubsetSpec", "ecn_correct", "ecn_pipeline", "ecn_train",
]
