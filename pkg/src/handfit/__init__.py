"""Textured 3D hand reconstruction from one image + detected 2D keypoints.

The geometry code (pose PCA coefficients, shape, scale, global rotation,
translation) and appearance code (per-vertex colors, 11 lighting scalars)
are fit per image by minimizing a weighted energy over keypoint alignment,
photometric consistency, and statistical regularizers.
"""

from .camera import Intrinsics, Keypoints2D, project
from .hand_model import (
    HandGeometry,
    HandModel,
    HandParams,
    apply_global,
    forward_geometry,
    load_model,
    pose_from_pca,
    regress_joints21,
    rodrigues,
    skin,
)

__all__ = [
    "HandGeometry",
    "HandModel",
    "HandParams",
    "Intrinsics",
    "Keypoints2D",
    "apply_global",
    "forward_geometry",
    "load_model",
    "pose_from_pca",
    "project",
    "regress_joints21",
    "rodrigues",
    "skin",
]

__version__ = "0.1.0"
