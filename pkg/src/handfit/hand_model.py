"""Parametric right-hand model: file loading, pose decoding, skinning, global placement.

All lengths are meters. The model file stores 16 skeleton joints in the
upstream order (wrist, index x3, middle x3, pinky x3, ring x3, thumb x3);
public 21-joint outputs use the detector layout (0 wrist, 1-4 thumb,
5-8 index, 9-12 middle, 13-16 ring, 17-20 pinky, proximal to tip).

Vertices are row vectors: the global transform is ``M = s * M0 @ R + T``,
so the stored rotation matrix acts on the right of each row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .exceptions import ModelFormatError

DTYPE = torch.float64

N_VERTICES = 778
N_JOINTS = 16
N_KEYPOINTS = 21
N_SHAPE = 10
N_POSE_PCA = 30
N_POSE_FULL = 45  # 15 posable joints x 3 axis-angle

# concat(joints16, tips[thumb, index, middle, ring, pinky]) -> 21-joint layout
REORDER_TO_21 = [0, 13, 14, 15, 16, 1, 2, 3, 17, 4, 5, 6, 18, 10, 11, 12, 19, 7, 8, 9, 20]

PALM_BONES = [(0, 1), (0, 5), (0, 9), (0, 13), (0, 17)]
FINGER_BONES = [
    (1, 2), (2, 3), (3, 4),        # thumb
    (5, 6), (6, 7), (7, 8),        # index
    (9, 10), (10, 11), (11, 12),   # middle
    (13, 14), (14, 15), (15, 16),  # ring
    (17, 18), (18, 19), (19, 20),  # pinky
]
ALL_BONES = PALM_BONES + FINGER_BONES

# 21-joint index -> index of the model joint whose local rotation drives
# the bone rooted at that joint (1-based within the 15 posable joints).
MODEL_JOINT_OF = {
    1: 13, 2: 14, 3: 15,   # thumb
    5: 1, 6: 2, 7: 3,      # index
    9: 4, 10: 5, 11: 6,    # middle
    13: 10, 14: 11, 15: 12,  # ring
    17: 7, 18: 8, 19: 9,   # pinky
}

_ARRAY_SHAPES = {
    "template_vertices": (N_VERTICES, 3),
    "faces": (None, 3),
    "shape_basis": (N_VERTICES, 3, N_SHAPE),
    "pose_basis": (N_VERTICES, 3, 9 * 15),
    "joint_regressor": (N_JOINTS, N_VERTICES),
    "skin_weights": (N_VERTICES, N_JOINTS),
    "kinematic_parents": (N_JOINTS,),
    "pca_pose_components": (None, N_POSE_FULL),
    "pca_pose_mean": (N_POSE_FULL,),
    "fingertip_vertex_ids": (5,),
}
_INT_ARRAYS = {"faces", "kinematic_parents", "fingertip_vertex_ids"}


@dataclass(frozen=True)
class HandModel:
    """Immutable hand template; safe to share across threads."""

    template_vertices: torch.Tensor   # (778, 3) m
    faces: torch.Tensor               # (F, 3) int64
    shape_basis: torch.Tensor         # (778, 3, 10)
    pose_basis: torch.Tensor          # (778, 3, 135)
    joint_regressor: torch.Tensor     # (16, 778)
    skin_weights: torch.Tensor        # (778, 16)
    kinematic_parents: torch.Tensor   # (16,) int64, parents[0] == -1
    pca_pose_components: torch.Tensor  # (n_pca, 45)
    pca_pose_mean: torch.Tensor       # (45,)
    fingertip_vertex_ids: torch.Tensor  # (5,) int64: thumb..pinky
    # Derived at load: per finger bone, template-frame [azimuth, pitch, roll]
    # axes as matrix columns, in FINGER_BONES order.
    finger_bone_frames: torch.Tensor = field(repr=False, default=None)  # (15, 3, 3)

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])


@dataclass
class HandParams:
    """Geometry code: PCA pose, shape, and the global similarity transform."""

    theta: torch.Tensor   # (30,)
    beta: torch.Tensor    # (10,)
    scale: torch.Tensor   # () > 0
    rot: torch.Tensor     # (3,) axis-angle, radians
    trans: torch.Tensor   # (3,) m

    @staticmethod
    def zeros(trans_z: float = 0.0) -> "HandParams":
        return HandParams(
            theta=torch.zeros(N_POSE_PCA, dtype=DTYPE),
            beta=torch.zeros(N_SHAPE, dtype=DTYPE),
            scale=torch.ones((), dtype=DTYPE),
            rot=torch.zeros(3, dtype=DTYPE),
            trans=torch.tensor([0.0, 0.0, trans_z], dtype=DTYPE),
        )


@dataclass
class HandGeometry:
    """Camera-frame mesh vertices and 21 keypoints, meters."""

    vertices: torch.Tensor  # (778, 3)
    joints21: torch.Tensor  # (21, 3)


def rodrigues(axis_angle: torch.Tensor) -> torch.Tensor:
    """Axis-angle (3,) to a 3x3 rotation matrix.

    The zero vector maps to the exact identity; near zero a second-order
    Taylor branch keeps gradients finite (norm is not differentiable at 0).
    """
    v = axis_angle
    sq = v.dot(v)
    eye = torch.eye(3, dtype=v.dtype)
    kx, ky, kz = v[0], v[1], v[2]
    zero = torch.zeros((), dtype=v.dtype)
    K = torch.stack([
        torch.stack([zero, -kz, ky]),
        torch.stack([kz, zero, -kx]),
        torch.stack([-ky, kx, zero]),
    ])
    if float(sq.detach()) < 1e-16:
        # R = I + K + K^2/2, exact at v = 0
        return eye + K + 0.5 * (K @ K)
    theta = torch.sqrt(sq)
    Kn = K / theta
    return eye + torch.sin(theta) * Kn + (1.0 - torch.cos(theta)) * (Kn @ Kn)


def pose_from_pca(theta: torch.Tensor, model: HandModel) -> torch.Tensor:
    """PCA coefficients (30,) to the full 45-dim axis-angle pose."""
    return model.pca_pose_mean + theta @ model.pca_pose_components


def skin(theta: torch.Tensor, beta: torch.Tensor, model: HandModel) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate the template: pose/shape -> (vertices (778,3), joints16 (16,3)).

    Shape blend shapes displace the template, the 16 rest joints are
    regressed from the shaped template, pose blend shapes add the
    (R_j - I) corrective, and linear blend skinning poses the result.
    The returned mesh/joints are in the hand-relative frame (root at the
    regressed wrist, no global transform).
    """
    v_shaped = model.template_vertices + torch.einsum("vdk,k->vd", model.shape_basis, beta)
    joints_rest = model.joint_regressor @ v_shaped

    full_pose = pose_from_pca(theta, model)
    rots = [rodrigues(full_pose[3 * j: 3 * j + 3]) for j in range(15)]

    pose_feat = torch.cat([(r - torch.eye(3, dtype=r.dtype)).reshape(9) for r in rots])
    v_posed = v_shaped + torch.einsum("vdk,k->vd", model.pose_basis, pose_feat)

    # forward kinematics along the parent chain; root keeps identity rotation
    parents = model.kinematic_parents.tolist()
    glob_rot: list[torch.Tensor] = [torch.eye(3, dtype=v_shaped.dtype)]
    glob_pos: list[torch.Tensor] = [joints_rest[0]]
    for j in range(1, N_JOINTS):
        p = parents[j]
        r_local = rots[j - 1]
        glob_rot.append(glob_rot[p] @ r_local)
        glob_pos.append(glob_pos[p] + (joints_rest[j] - joints_rest[p]) @ torch.transpose(glob_rot[p], 0, 1))

    R = torch.stack(glob_rot)          # (16, 3, 3)
    t = torch.stack(glob_pos)          # (16, 3)

    # v' = sum_j w_vj * (R_j (v - j_rest) + t_j), with row-vector points
    local = v_posed.unsqueeze(0) - joints_rest.unsqueeze(1)          # (16, 778, 3)
    moved = torch.einsum("jvd,jde->jve", local, torch.transpose(R, 1, 2)) + t.unsqueeze(1)
    vertices = torch.einsum("vj,jvd->vd", model.skin_weights, moved)
    return vertices, t


def regress_joints21(vertices: torch.Tensor, joints16: torch.Tensor, model: HandModel) -> torch.Tensor:
    """Append the 5 fingertip vertices and reorder to the 21-keypoint layout."""
    tips = vertices[model.fingertip_vertex_ids]
    return torch.cat([joints16, tips], dim=0)[REORDER_TO_21]


def apply_global(vertices: torch.Tensor, joints: torch.Tensor, scale: torch.Tensor,
                 rot: torch.Tensor, trans: torch.Tensor) -> HandGeometry:
    """Similarity transform into the camera frame: X -> s * X @ R + T."""
    if float(scale.detach() if hasattr(scale, 'detach') else scale) <= 0.0:
        raise ValueError(f"scale must be positive, got {float(scale)}")
    R = rodrigues(rot)
    return HandGeometry(
        vertices=scale * vertices @ R + trans,
        joints21=scale * joints @ R + trans,
    )


def forward_geometry(params: HandParams, model: HandModel) -> HandGeometry:
    """Full decode: HandParams -> camera-frame mesh and 21 keypoints."""
    verts, joints16 = skin(params.theta, params.beta, model)
    j21 = regress_joints21(verts, joints16, model)
    return apply_global(verts, j21, params.scale, params.rot, params.trans)


def _finger_bone_frames(joints21_template: torch.Tensor) -> torch.Tensor:
    """Per finger bone: [azimuth, pitch, roll] axes as columns (15, 3, 3).

    Roll axis = template bone direction. Azimuth axis = back-of-hand
    normal (ring-MCP x index-MCP about the wrist) orthogonalized against
    the bone. Pitch axis completes the right-handed frame, so flexion
    toward the palm is negative pitch.
    """
    t = joints21_template
    n = torch.linalg.cross(t[13] - t[0], t[5] - t[0])
    n = n / torch.linalg.norm(n)
    frames = []
    for a, b in FINGER_BONES:
        r = t[b] - t[a]
        r = r / torch.linalg.norm(r)
        az = n - (n @ r) * r
        az_norm = torch.linalg.norm(az)
        if float(az_norm) < 1e-8:
            raise ModelFormatError(f"template bone {a}->{b} parallel to the palm normal")
        az = az / az_norm
        p = torch.linalg.cross(r, az)
        frames.append(torch.stack([az, p, r], dim=1))
    return torch.stack(frames)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ModelFormatError(msg)


def load_model(path: str | Path) -> HandModel:
    """Load and validate a portable ``handmodel-v1`` JSON file."""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    with open(path) as f:
        doc = json.load(f)
    _check(doc.get("format") == "handmodel-v1", f"bad format tag: {doc.get('format')!r}")

    arrays: dict[str, torch.Tensor] = {}
    for name, want in _ARRAY_SHAPES.items():
        _check(name in doc, f"missing array {name!r}")
        entry = doc[name]
        _check(isinstance(entry, dict) and "shape" in entry and "data" in entry,
               f"array {name!r} must have 'shape' and 'data'")
        shape = tuple(entry["shape"])
        _check(len(shape) == len(want), f"{name}: expected {len(want)} dims, got {len(shape)}")
        for got_d, want_d in zip(shape, want):
            _check(want_d is None or got_d == want_d, f"{name}: shape {shape} != expected {want}")
        flat = np.asarray(entry["data"], dtype=np.float64)
        _check(flat.ndim == 1 and flat.size == int(np.prod(shape)),
               f"{name}: payload has {flat.size} values for shape {shape}")
        _check(np.isfinite(flat).all(), f"{name}: non-finite entries")
        arr = flat.reshape(shape)
        if name in _INT_ARRAYS:
            as_int = arr.astype(np.int64)
            _check(np.array_equal(as_int, arr), f"{name}: non-integer entries")
            arrays[name] = torch.from_numpy(as_int)
        else:
            arrays[name] = torch.from_numpy(arr)

    faces = arrays["faces"]
    _check(bool((faces >= 0).all()) and bool((faces < N_VERTICES).all()),
           "face indices out of range")
    parents = arrays["kinematic_parents"]
    _check(int(parents[0]) == -1, "kinematic_parents[0] must be the -1 sentinel")
    _check(bool((parents[1:] >= 0).all()) and all(int(parents[j]) < j for j in range(1, N_JOINTS)),
           "kinematic_parents must reference earlier joints")
    row_sums = arrays["skin_weights"].sum(dim=1)
    _check(bool(torch.all((row_sums - 1.0).abs() <= 1e-5)), "skin_weights rows must sum to 1")
    _check(bool((arrays["skin_weights"] >= -1e-9).all()), "skin_weights must be nonnegative")
    reg_sums = arrays["joint_regressor"].sum(dim=1)
    _check(bool(torch.all((reg_sums - 1.0).abs() <= 1e-4)), "joint_regressor rows must sum to 1")
    tips = arrays["fingertip_vertex_ids"]
    _check(bool((tips >= 0).all()) and bool((tips < N_VERTICES).all()),
           "fingertip_vertex_ids out of range")

    joints_rest = arrays["joint_regressor"] @ arrays["template_vertices"]
    j21 = torch.cat([joints_rest, arrays["template_vertices"][tips]], dim=0)[REORDER_TO_21]
    frames = _finger_bone_frames(j21)

    return HandModel(finger_bone_frames=frames, **arrays)
