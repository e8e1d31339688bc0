from .builders import EXPECTED_PARAMETERS, ModelKind, build
from .layers import (
    AvgPool2d,
    Conv2d,
    Dense,
    Embedding,
    Flatten,
    GlobalAvgPool2d,
    Layer,
    LayerShape,
    Lstm,
    MaxPool2d,
    Relu,
    SequenceMean,
)
from .lstm import input_projection, lstm_cell, lstm_sequence
from .model import Model

__all__ = [
    "EXPECTED_PARAMETERS",
    "AvgPool2d",
    "Conv2d",
    "Dense",
    "Embedding",
    "Flatten",
    "GlobalAvgPool2d",
    "Layer",
    "LayerShape",
    "Lstm",
    "MaxPool2d",
    "Model",
    "ModelKind",
    "Relu",
    "SequenceMean",
    "build",
    "input_projection",
    "lstm_cell",
    "lstm_sequence",
]
