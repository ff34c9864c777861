"""Lightweight visual place recognition with binary classifiers and a learned merger."""

from .baseline import BaselineClassifier, BaselineConfig
from .merger import MergerNet, conv1d_full_height
from .pipeline import SystemConfig, VprSystem, train_system

__all__ = [
    "BaselineClassifier",
    "BaselineConfig",
    "MergerNet",
    "SystemConfig",
    "VprSystem",
    "conv1d_full_height",
    "train_system",
]
