"""Metadata-driven app triage: features, models, and benchmark experiments."""

__version__ = "0.1.0"

from .corpus import (
    AppRecord,
    CompositionRecipe,
    DetectionLabelPolicy,
    GeneratorConfig,
    LabeledDataset,
    SignalStrengths,
    compose_subset,
    generate_synthetic,
    label_record,
    parse_records,
)
from .errors import MetatriageError
from .evaluate import EvalReport, PipelineConfig, SelectionSpec, cross_validate
from .featurize import FeatureMatrix, HashConfig, ReputationTable, assemble_features
from .learn import Hyperparams, predict_score, train_model
from .select import RankedFeatures, rank_features

__all__ = [
    "AppRecord",
    "CompositionRecipe",
    "DetectionLabelPolicy",
    "EvalReport",
    "FeatureMatrix",
    "GeneratorConfig",
    "HashConfig",
    "Hyperparams",
    "LabeledDataset",
    "MetatriageError",
    "PipelineConfig",
    "RankedFeatures",
    "ReputationTable",
    "SelectionSpec",
    "SignalStrengths",
    "__version__",
    "assemble_features",
    "compose_subset",
    "cross_validate",
    "generate_synthetic",
    "label_record",
    "parse_records",
    "predict_score",
    "rank_features",
    "train_model",
]
