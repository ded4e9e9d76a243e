"""Pedestrian crossing-intention prediction with side-task learning.

A small reverse-mode autodiff engine on numpy, lightweight CNN backbones, a
GRU crossing head with pose and speed side heads, and the data pipeline,
training loop, metrics and CLI around them.
"""

from .backbones import BackboneConfig, squeezenet_parameter_count
from .config import RunConfig
from .exceptions import (AnnotationParseError, CheckpointError, ConfigError, ContractError,
                         DataError, DimensionError, FingerprintMismatchError, NumericError,
                         ParameterError, PedxingError, UndefinedMetricError)
from .heads import ModelPhi, gru_cell, model_forward
from .losses import ClassWeights, combined_loss, compute_class_weights, weighted_cross_entropy
from .metrics import accuracy, precision, roc_auc, roc_curve
from .tensor import Tensor, no_grad
from .training import Trainer, evaluate

__version__ = "0.1.0"

__all__ = [
    "AnnotationParseError", "BackboneConfig", "CheckpointError", "ClassWeights", "ConfigError",
    "ContractError", "CrossingIntentionClassifier", "DataError", "DimensionError",
    "FingerprintMismatchError", "ModelPhi", "NumericError", "ParameterError", "PedxingError",
    "RunConfig", "Tensor", "Trainer", "UndefinedMetricError", "accuracy", "combined_loss",
    "compute_class_weights", "evaluate", "gru_cell", "model_forward", "no_grad", "precision",
    "roc_auc", "roc_curve", "squeezenet_parameter_count", "weighted_cross_entropy",
]


def __getattr__(name):
    # scikit-learn is only imported when the estimator wrapper is asked for
    if name == "CrossingIntentionClassifier":
        from .estimator import CrossingIntentionClassifier
        return CrossingIntentionClassifier
    raise AttributeError(f"module 'pedxing' has no attribute {name!r}")
