"""Trimodal variant-effect classification from sequence, structure and GNM dynamics."""

from __future__ import annotations

from .core_data import VariantRecord, binarize_labels, parse_variant_csv
from .fusion import FusionConfig, FusionModel
from .gnm import gnm_features
from .structure_io import ProteinStructure, parse_pdb
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "FusionConfig",
    "FusionModel",
    "ProteinStructure",
    "TrainConfig",
    "VariantRecord",
    "binarize_labels",
    "gnm_features",
    "parse_pdb",
    "parse_variant_csv",
    "train",
]
