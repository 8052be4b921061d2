"""Episodic pair-contrast training and few-shot evaluation engine."""

from .nn import ContrastNet, ModelParams, ModelSpec, contrast_loss, predict
from .tensor import Tensor, grad_check

__all__ = [
    "ContrastNet",
    "ModelParams",
    "ModelSpec",
    "Tensor",
    "contrast_loss",
    "grad_check",
    "predict",
]

__version__ = "0.1.0"
