"""Patch classifiers: a trainable convolutional network and a fringe-density baseline."""

from .baseline import BaselineClassifier, baseline_predict, fringe_fraction
from .network import (PATCH_SIZE, REFERENCE_ARCHITECTURE, ClassifierModel, load_model,
                      save_model)
from .training import TrainParams, accuracy, gradient_check, train


def predict(model, patch) -> float:
    return model.predict(patch)


def load_classifier(spec):
    """``"baseline"`` or a path to a CLF1 model file."""
    if str(spec) == "baseline":
        return BaselineClassifier()
    return load_model(spec)


__all__ = [
    "PATCH_SIZE", "REFERENCE_ARCHITECTURE", "BaselineClassifier", "ClassifierModel", "TrainParams",
    "accuracy", "baseline_predict", "fringe_fraction", "gradient_check", "load_classifier",
    "load_model", "predict", "save_model", "train",
]
