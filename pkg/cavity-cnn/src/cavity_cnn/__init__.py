"""Ventral-cavity segmentation CNN and MetaImage mask export."""

from .mhd import Volume, read_volume, write_mask
from .model import (
    CavityNet,
    NetworkSpec,
    init_gaussian,
    layer_census,
    normalize_hu,
    spec_from_text,
    spec_to_text,
)
from .predict import export_cavity_mask, predict_volume
from .train import EarlyStopper, TrainResult, TrainSpec, train
from .data import slice_stacks

__version__ = "0.1.0"

__all__ = [
    "CavityNet",
    "EarlyStopper",
    "NetworkSpec",
    "TrainResult",
    "TrainSpec",
    "Volume",
    "export_cavity_mask",
    "init_gaussian",
    "layer_census",
    "normalize_hu",
    "predict_volume",
    "read_volume",
    "slice_stacks",
    "spec_from_text",
    "spec_to_text",
    "train",
    "write_mask",
]
