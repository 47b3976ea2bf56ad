"""Two-level prediction of trial operational success through latent risk factors."""
from __future__ import annotations

from .cascade import CascadeConfig, TrainedCascade, evaluate, predict, train_cascade
from .dataset import FeatureSchema, TabularDataset, load_csv, load_schema
from .splitting import SplitPlan, make_split
from .synthgen import GeneratorConfig, generate
from .targets import Factor

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig",
    "Factor",
    "FeatureSchema",
    "GeneratorConfig",
    "SplitPlan",
    "TabularDataset",
    "TrainedCascade",
    "evaluate",
    "generate",
    "load_csv",
    "load_schema",
    "make_split",
    "predict",
    "train_cascade",
]
