"""Ingestion and artifact I/O: keypoints, images, OBJ meshes, params files."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import Keypoints2D
from .exceptions import KeypointFormatError
from .fitting import FitState
from .hand_model import HandGeometry

JOINT_ORDERS = {
    # Detector layouts mapped onto the 21-keypoint model layout. The
    # common detector export already uses wrist, thumb..pinky ordering.
    "openpose": list(range(21)),
    "model": list(range(21)),
}


def _parse_order(spec: str) -> list[int]:
    if spec in JOINT_ORDERS:
        return JOINT_ORDERS[spec]
    if spec.startswith("custom:"):
        order = [int(t) for t in spec[len("custom:"):].split(",")]
        if sorted(order) != list(range(21)):
            raise KeypointFormatError(f"custom joint order must permute 0..20, got {order}")
        return order
    raise KeypointFormatError(f"unknown joint order {spec!r}")


def parse_keypoints(path: str | Path, joint_order: str = "openpose") -> Keypoints2D:
    """Read a detector JSON into 21 points + confidences in model order.

    Accepts the nested detector export
    ``{"people": [{"hand_right_keypoints_2d": [x1, y1, c1, ...]}]}`` or the
    flat form ``{"points": [[x, y, c], ...]}``. Confidences outside [0, 1]
    are clamped with a warning.
    """
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise KeypointFormatError(f"cannot read keypoint file {path}: {e}") from e

    if "people" in doc:
        people = doc["people"]
        if not people or "hand_right_keypoints_2d" not in people[0]:
            raise KeypointFormatError(f"{path}: no hand_right_keypoints_2d entry")
        flat = people[0]["hand_right_keypoints_2d"]
        if len(flat) != 63:
            raise KeypointFormatError(
                f"{path}: expected 21 keypoints (63 numbers), got {len(flat) // 3}")
        rows = [flat[3 * i: 3 * i + 3] for i in range(21)]
    elif "points" in doc:
        rows = doc["points"]
        if len(rows) != 21:
            raise KeypointFormatError(f"{path}: expected 21 keypoints, got {len(rows)}")
    else:
        raise KeypointFormatError(f"{path}: neither 'people' nor 'points' present")

    try:
        arr = np.asarray(rows, dtype=np.float64).reshape(21, 3)
    except (TypeError, ValueError) as e:
        raise KeypointFormatError(f"{path}: non-numeric keypoint entries") from e
    if not np.isfinite(arr).all():
        raise KeypointFormatError(f"{path}: non-finite keypoint entries")

    order = _parse_order(joint_order)
    arr = arr[order]
    conf = arr[:, 2]
    if (conf < 0).any() or (conf > 1).any():
        warnings.warn(f"{path}: confidences outside [0, 1] clamped", stacklevel=2)
        conf = np.clip(conf, 0.0, 1.0)
    return Keypoints2D(points=torch.from_numpy(arr[:, :2].copy()),
                       confidence=torch.from_numpy(conf.copy()))


def load_image(path: str | Path) -> torch.Tensor:
    """Load 8-bit PNG/JPEG as (H, W, 3) float64 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return torch.from_numpy(np.asarray(img, dtype=np.float64) / 255.0)


def save_image(tensor: torch.Tensor, path: str | Path) -> None:
    """Save (H, W, 3) floats in [0, 1] or an (H, W) mask as 8-bit PNG."""
    arr = tensor.detach().numpy()
    if arr.ndim == 2:
        Image.fromarray((arr * 255).round().astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8)).save(path)


def crop_resize(image: torch.Tensor, bbox: tuple[float, float, float, float] | None,
                size: int, K):
    """Crop the (x, y, w, h) window, resize to size x size, rescale intrinsics."""
    h, w = image.shape[0], image.shape[1]
    if bbox is not None:
        x, y, bw, bh = (int(round(v)) for v in bbox)
        x, y = max(0, x), max(0, y)
        bw, bh = min(bw, w - x), min(bh, h - y)
        image = image[y:y + bh, x:x + bw]
        K = K.cropped(x, y, bw, bh)
    if image.shape[0] != size or image.shape[1] != size:
        pil = Image.fromarray((np.clip(image.numpy(), 0, 1) * 255).round().astype(np.uint8))
        pil = pil.resize((size, size), Image.BILINEAR)
        image = torch.from_numpy(np.asarray(pil, dtype=np.float64) / 255.0)
        K = K.scaled(size, size)
    return image, K


def export_obj(geometry: HandGeometry, colors: torch.Tensor | None,
               faces: torch.Tensor, path: str | Path) -> None:
    """Wavefront OBJ; per-vertex RGB appended to ``v`` lines when given."""
    verts = geometry.vertices.detach().numpy()
    lines = []
    if colors is not None:
        cols = colors.detach().numpy()
        for v, c in zip(verts, cols):
            lines.append(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g} {c[0]:.8g} {c[1]:.8g} {c[2]:.8g}")
    else:
        for v in verts:
            lines.append(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}")
    for f in faces.numpy():
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Parse an OBJ written by export_obj: (vertices, faces, colors or None)."""
    verts, faces, cols = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            nums = [float(t) for t in parts[1:]]
            verts.append(nums[:3])
            if len(nums) == 6:
                cols.append(nums[3:])
        elif parts[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    colors = np.asarray(cols) if cols else None
    return np.asarray(verts), np.asarray(faces, dtype=np.int64), colors


def save_params(state: FitState, path: str | Path) -> None:
    """Write the fitted parameter bundle as params.json."""
    doc = {
        "theta": state.theta.detach().tolist(),
        "beta": state.beta.detach().tolist(),
        "scale": float(state.scale.detach().reshape(())),
        "rot": state.rot.detach().tolist(),
        "trans": state.trans.detach().tolist(),
        "colors": state.colors.detach().tolist(),
        "lighting": state.lighting.detach().tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path: str | Path) -> FitState:
    with open(path) as f:
        doc = json.load(f)
    t = lambda key, n: torch.tensor(np.asarray(doc[key], dtype=np.float64)).reshape(n)
    return FitState(theta=t("theta", 30), beta=t("beta", 10),
                    scale=torch.tensor([float(doc["scale"])], dtype=torch.float64),
                    rot=t("rot", 3), trans=t("trans", 3),
                    colors=t("colors", (778, 3)), lighting=t("lighting", 11))
