"""Toy-scale detectors and their trainer."""

from .model import (TOY_ANCHORS, Model, ModelKind, Prediction, ToyBackboneConfig, ToyModelKind,
                    build_model, predict)
from .train import TrainConfig, TrainingLog, TrainingResult, train, validation_ap50

__all__ = [
    "TOY_ANCHORS", "Model", "ModelKind", "Prediction", "ToyBackboneConfig", "ToyModelKind",
    "TrainConfig", "TrainingLog", "TrainingResult", "build_model", "predict", "train",
    "validation_ap50",
]
