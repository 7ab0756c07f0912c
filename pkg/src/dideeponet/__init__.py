"""Derivative-informed DeepONet and Geometric-DeepONet surrogates for 3D voxelized flow."""

from . import autodiff, dataset, fem, geometry, kernels, losses, metrics, npyio, operators, trainer
from .dataset import Dataset, SplitSpec, read_dataset, split, synth_dataset, write_dataset
from .errors import (ConfigurationError, DegenerateSampleError, FormatError, NumericalError,
                     UndefinedMetricError, UsageError, ValidationError)
from .fem import NodalField, continuity_residual, postprocess
from .geometry import ShapeSpec, analytic_sdf, build_catalog, mesh_sdf, triangulate
from .losses import LossWeights
from .metrics import MetricsReport, unified_score
from .operators import OperatorConfig, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "autodiff", "dataset", "fem", "geometry", "kernels", "losses", "metrics", "npyio",
    "operators", "trainer",
    "Dataset", "SplitSpec", "read_dataset", "split", "synth_dataset", "write_dataset",
    "ConfigurationError", "DegenerateSampleError", "FormatError", "NumericalError",
    "UndefinedMetricError", "UsageError", "ValidationError",
    "NodalField", "continuity_residual", "postprocess",
    "ShapeSpec", "analytic_sdf", "build_catalog", "mesh_sdf", "triangulate",
    "LossWeights", "MetricsReport", "unified_score",
    "OperatorConfig", "init_params", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "evaluate", "train",
]
