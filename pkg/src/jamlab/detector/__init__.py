"""Convolutional jammed/clean slot detector."""
from .checkpoint import load_model, save_model
from .estimator import JammingDetector
from .metrics import MetricsReport, classification_report, confusion_matrix
from .network import (CANONICAL_SPEC, DetectorModel, NetworkSpec, backward, forward, loss,
                      predict_proba)
from .training import TrainConfig, TrainHistory, evaluate, evaluate_arrays, train, train_arrays

__all__ = [
    "CANONICAL_SPEC", "DetectorModel", "JammingDetector", "MetricsReport", "NetworkSpec",
    "TrainConfig", "TrainHistory", "backward", "classification_report", "confusion_matrix",
    "evaluate", "evaluate_arrays", "forward", "load_model", "loss", "predict_proba",
    "save_model", "train", "train_arrays",
]
