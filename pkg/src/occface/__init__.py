"""Occlusion-aware 3D face reconstruction at desk scale.

Label-map merging from face parsing and landmarks, a linear morphable model,
a software rasterizer with SH shading, normalization ops, the synthesis and
fitting losses, an analysis-by-synthesis fitter and a synthetic scene generator.
"""
from .fitter import FitConfig, FitReport, fit, init_pose_from_landmarks, loss_gradient, vertex_error_stats
from .labels import LabelClassSets, merge_maps, occlusion_attention, regions_from_landmarks
from .losses import LossWeights, fisn_total_loss, total_3d_loss
from .morphable import CoefficientVector, MorphableModel, make_synthetic_model
from .raster import render
from .scene import Pose
from .synthgen import make_scene

__version__ = "0.1.0"

__all__ = [
    "CoefficientVector", "FitConfig", "FitReport", "LabelClassSets", "LossWeights", "MorphableModel", "Pose",
    "fisn_total_loss", "fit", "init_pose_from_landmarks", "loss_gradient", "make_scene", "make_synthetic_model",
    "merge_maps", "occlusion_attention", "regions_from_landmarks", "render", "total_3d_loss",
    "vertex_error_stats",
]
