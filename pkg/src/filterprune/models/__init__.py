"""Residual CNN classifiers expressed as explicit layer graphs."""
from .checkpoint import load_checkpoint, save_checkpoint
from .graph import INPUT, GraphBuilder, LayerSpec, ModelGraph, forward
from .resnet import STAGE_BLOCKS, build_resnet, stage_block_counts

__all__ = [
    "INPUT",
    "LayerSpec",
    "ModelGraph",
    "GraphBuilder",
    "forward",
    "build_resnet",
    "STAGE_BLOCKS",
    "stage_block_counts",
    "save_checkpoint",
    "load_checkpoint",
]
