"""Synthetic defect imagery, fold splitting and augmentation."""
from .augment import augment, center_crop, hflip, pad_crop
from .folds import FoldPlan, kfold_split
from .manifest import DEFECTIVE, NON_DEFECTIVE, DatasetManifest, DefectKind, ManifestRecord
from .synth import GeneratorConfig, generate_dataset, render_image

__all__ = [
    "augment",
    "center_crop",
    "hflip",
    "pad_crop",
    "FoldPlan",
    "kfold_split",
    "DEFECTIVE",
    "NON_DEFECTIVE",
    "DatasetManifest",
    "DefectKind",
    "ManifestRecord",
    "GeneratorConfig",
    "generate_dataset",
    "render_image",
]
