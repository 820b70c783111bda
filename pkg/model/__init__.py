"""
CNN backbone, prediction heads and checkpoints.

The backbone is a 4-layer custom CNN; on top of it sit the single-target,
power-set, multi-output and GSMo (stacked, cross-connected) head paradigms.
"""

from model.checkpoint import load_checkpoint, load_into, save_checkpoint, transfer_groups
from model.network import (
    GsmoOutputs,
    ModelParams,
    MultiModel,
    Predictions,
    forward_backbone,
    forward_gsmo,
    forward_head,
    init_model,
    predict,
)

__all__ = [
    "GsmoOutputs",
    "ModelParams",
    "MultiModel",
    "Predictions",
    "forward_backbone",
    "forward_gsmo",
    "forward_head",
    "init_model",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "load_into",
    "transfer_groups",
]
