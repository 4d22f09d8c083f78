"""Symmetric pattern enforcement (SPE) for GAN training of seamless,
reflection-symmetric image patches, with a small numpy autodiff stack and
generative evaluation metrics."""

from .dataset import PatchDataset, load_dataset, save_dataset, synth_dataset, tile
from .estimators import SPEGAN, SymmetryProjector
from .metrics import FeatureEmbedder, MetricsReport, density_coverage, frechet_distance, precision_recall
from .symmetry import SpeConfig, SymmetryOp, apply_symmetry, spe_loss, symmetry_residual, verify_dataset
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "FeatureEmbedder",
    "MetricsReport",
    "PatchDataset",
    "SPEGAN",
    "SpeConfig",
    "SymmetryOp",
    "SymmetryProjector",
    "Tensor",
    "apply_symmetry",
    "density_coverage",
    "frechet_distance",
    "load_dataset",
    "precision_recall",
    "save_dataset",
    "spe_loss",
    "symmetry_residual",
    "synth_dataset",
    "tile",
    "verify_dataset",
]
