"""Occlusion-robust cascaded regression for facial landmarks and their visibility."""
from .cascade import (CascadeConfig, CascadeModel, Detection, FeatureConfig, ModelFormatError, detect,
                      load_model, save_model, train_cascade)
from .dataio import DatasetError, SampleRecord, load_dataset, save_dataset
from .evalkit import EvalReport, cumulative_error_distribution, evaluate, normalized_error, recall_at_precision
from .shape import FaceBox
from .synth import SynthConfig, generate_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig", "CascadeModel", "Detection", "FeatureConfig", "ModelFormatError", "detect",
    "load_model", "save_model", "train_cascade", "DatasetError", "SampleRecord", "load_dataset",
    "save_dataset", "EvalReport", "cumulative_error_distribution", "evaluate", "normalized_error",
    "recall_at_precision", "FaceBox", "SynthConfig", "generate_synthetic_dataset",
]
