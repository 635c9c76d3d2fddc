"""Pinhole projection into image UV coordinates.

Pixel convention: (0, 0) is the CENTER of the top-left pixel, u grows
rightward, v downward. No lens distortion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .exceptions import DegenerateDepthError

MIN_DEPTH = 1e-6  # meters


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics after resampling the image to width x height."""
        sx, sy = width / self.width, height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def cropped(self, x: float, y: float, w: int, h: int) -> "Intrinsics":
        """Intrinsics after cropping the (x, y, w, h) pixel window."""
        return Intrinsics(self.fx, self.fy, self.cx - x, self.cy - y, w, h)


def load_intrinsics(path: str | Path) -> Intrinsics:
    with open(path) as f:
        doc = json.load(f)
    try:
        return Intrinsics(fx=float(doc["fx"]), fy=float(doc["fy"]), cx=float(doc["cx"]),
                          cy=float(doc["cy"]), width=int(doc["width"]), height=int(doc["height"]))
    except KeyError as e:
        raise ValueError(f"intrinsics file {path} missing key {e}") from e


@dataclass
class Keypoints2D:
    """21 image-space keypoints with per-joint confidences in [0, 1]."""

    points: torch.Tensor      # (21, 2) pixels
    confidence: torch.Tensor  # (21,)

    def __post_init__(self):
        if tuple(self.points.shape) != (21, 2):
            raise ValueError(f"expected 21x2 points, got {tuple(self.points.shape)}")
        if tuple(self.confidence.shape) != (21,):
            raise ValueError(f"expected 21 confidences, got {tuple(self.confidence.shape)}")
        if bool((self.confidence < 0).any()) or bool((self.confidence > 1).any()):
            raise ValueError("confidences must lie in [0, 1]")

    @property
    def con_sum(self) -> torch.Tensor:
        return self.confidence.sum()


def project(points3d: torch.Tensor, K: Intrinsics) -> torch.Tensor:
    """Perspective projection (N, 3) camera frame -> (N, 2) pixels.

    u = fx * x / z + cx, v = fy * y / z + cy. Points at or behind the
    camera plane raise DegenerateDepthError.
    """
    z = points3d[:, 2]
    if bool((z.detach() <= MIN_DEPTH).any()):
        bad = int(torch.argmin(z.detach()))
        raise DegenerateDepthError(
            f"point {bad} has depth {float(z[bad].detach()):.3g} m (<= {MIN_DEPTH})")
    u = K.fx * points3d[:, 0] / z + K.cx
    v = K.fy * points3d[:, 1] / z + K.cy
    return torch.stack([u, v], dim=1)
