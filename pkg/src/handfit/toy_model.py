"""Procedural "toy hand" model with the same schema as a converted release.

The real hand-model release is licensed and never ships with this repo;
CI and the examples run against the file this module generates. It keeps
the full 778-vertex / 16-joint structure: a palm ellipsoid plus five
finger tubes, ring vertices centered on every skeleton joint so the
joint regressor is exact, distance-based skinning weights, smooth random
shape blend shapes, small random pose correctives, and an axis-aligned
30-row pose basis over the MCP/PIP joints so test poses can be composed
exactly from target joint rotations.

Deterministic for a given seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

N_VERTICES = 778
RING_K = 8            # vertices per finger ring
RINGS_PER_FINGER = 9  # rings 0, 3, 5 sit exactly on MCP, PIP, DIP
PALM_LAT = 31         # rows including both poles
PALM_LON = 14

# Fingers in model-joint order (after the wrist): index, middle, pinky,
# ring, thumb; joint ids 1-3, 4-6, 7-9, 10-12, 13-15.
_FINGERS = {
    "index": dict(mcp=(0.088, 0.024, 0.0), dir=(1.0, 0.18, 0.0),
                  lengths=(0.026, 0.016, 0.012), radius=(0.0080, 0.0042)),
    "middle": dict(mcp=(0.092, 0.007, 0.0), dir=(1.0, 0.02, 0.0),
                   lengths=(0.0282, 0.018, 0.013), radius=(0.0082, 0.0044)),
    "pinky": dict(mcp=(0.079, -0.027, 0.0), dir=(1.0, -0.28, 0.0),
                  lengths=(0.020, 0.013, 0.010), radius=(0.0065, 0.0036)),
    "ring": dict(mcp=(0.087, -0.010, 0.0), dir=(1.0, -0.12, 0.0),
                 lengths=(0.025, 0.016, 0.012), radius=(0.0076, 0.0040)),
    "thumb": dict(mcp=(0.022, 0.030, 0.0), dir=(0.55, 0.83, 0.0),
                  lengths=(0.030, 0.026, 0.020), radius=(0.0095, 0.0050)),
}
_PALM_CENTER = np.array([0.045, 0.0, 0.0])
_PALM_AXES = np.array([0.052, 0.038, 0.012])

KINEMATIC_PARENTS = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14]

# MCP and PIP of every finger, in model-joint numbering: the 30 PCA rows
# drive exactly these joints' axis-angle components.
PCA_CONTROLLED_JOINTS = [1, 2, 4, 5, 7, 8, 10, 11, 13, 14]


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _ring_basis(direction):
    e1 = _unit(np.cross([0.0, 0.0, 1.0], direction))
    e2 = np.cross(direction, e1)
    return e1, e2


def _orient_outward(vertices, faces, center):
    """Flip the whole component's winding if its normals face the center."""
    tri = vertices[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = np.einsum("fd,fd->f", normals, tri.mean(axis=1) - center)
    if outward.sum() < 0.0:
        faces = faces[:, ::-1].copy()
    return faces


def _build_finger(spec, rng):
    mcp = np.array(spec["mcp"], dtype=np.float64)
    d = _unit(spec["dir"])
    l1, l2, l3 = spec["lengths"]
    pip = mcp + l1 * d
    dip = pip + l2 * d
    tip = dip + l3 * d
    r0, r1 = spec["radius"]

    chain = [mcp, pip, dip, tip]
    stations = [
        mcp,
        mcp + (l1 / 3.0) * d, mcp + (2.0 * l1 / 3.0) * d,
        pip,
        pip + 0.5 * l2 * d,
        dip,
        dip + (l3 / 3.0) * d, dip + (2.0 * l3 / 3.0) * d, dip + 0.92 * l3 * d,
    ]
    radii = np.linspace(r0, r1, RINGS_PER_FINGER)
    e1, e2 = _ring_basis(d)

    verts = [mcp - 0.006 * d]  # base cap center
    for center, rho in zip(stations, radii):
        jitter = 1.0 + 0.04 * rng.uniform(-1.0, 1.0)
        for k in range(RING_K):
            phi = 2.0 * np.pi * k / RING_K
            verts.append(center + rho * jitter * (np.cos(phi) * e1 + np.sin(phi) * e2))
    verts.append(tip + 0.004 * d)  # apex
    verts = np.array(verts)
    apex = len(verts) - 1

    ring = lambda i, k: 1 + i * RING_K + (k % RING_K)
    faces = []
    for k in range(RING_K):
        faces.append([0, ring(0, k + 1), ring(0, k)])
    for i in range(RINGS_PER_FINGER - 1):
        for k in range(RING_K):
            faces.append([ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)])
            faces.append([ring(i, k), ring(i + 1, k + 1), ring(i + 1, k)])
    for k in range(RING_K):
        faces.append([apex, ring(RINGS_PER_FINGER - 1, k), ring(RINGS_PER_FINGER - 1, k + 1)])
    faces = _orient_outward(verts, np.array(faces, dtype=np.int64), verts.mean(axis=0))
    return verts, faces, apex, chain


def _build_palm():
    verts = [_PALM_CENTER + _PALM_AXES * np.array([1.0, 0.0, 0.0])]
    for i in range(1, PALM_LAT - 1):
        th = np.pi * i / (PALM_LAT - 1)
        for j in range(PALM_LON):
            ph = 2.0 * np.pi * j / PALM_LON
            verts.append(_PALM_CENTER + _PALM_AXES * np.array(
                [np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)]))
    verts.append(_PALM_CENTER + _PALM_AXES * np.array([-1.0, 0.0, 0.0]))
    verts = np.array(verts)

    row = lambda i, j: 1 + (i - 1) * PALM_LON + (j % PALM_LON)
    faces = []
    for j in range(PALM_LON):
        faces.append([0, row(1, j), row(1, j + 1)])
    for i in range(1, PALM_LAT - 2):
        for j in range(PALM_LON):
            faces.append([row(i, j), row(i + 1, j), row(i + 1, j + 1)])
            faces.append([row(i, j), row(i + 1, j + 1), row(i, j + 1)])
    south = len(verts) - 1
    for j in range(PALM_LON):
        faces.append([south, row(PALM_LAT - 2, j + 1), row(PALM_LAT - 2, j)])
    faces = _orient_outward(verts, np.array(faces, dtype=np.int64), _PALM_CENTER)
    return verts, faces


def _segment_distances(points, seg_a, seg_b):
    ab = seg_b - seg_a
    t = np.clip((points - seg_a) @ ab / (ab @ ab), 0.0, 1.0)
    closest = seg_a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def generate_toy_model(seed: int = 20240217) -> dict[str, np.ndarray]:
    """Build all model arrays; see module docstring for the construction."""
    rng = np.random.default_rng(seed)

    palm_verts, palm_faces = _build_palm()
    verts = [palm_verts]
    faces = [palm_faces]
    offset = len(palm_verts)
    tip_ids = {}
    chains = {}
    for name in ["index", "middle", "pinky", "ring", "thumb"]:
        fv, ff, apex, chain = _build_finger(_FINGERS[name], rng)
        verts.append(fv)
        faces.append(ff + offset)
        tip_ids[name] = offset + apex
        chains[name] = chain
        offset += len(fv)
    template = np.concatenate(verts)
    faces = np.concatenate(faces)
    assert template.shape == (N_VERTICES, 3), template.shape

    # 16 skeleton joints, model order: wrist then MCP/PIP/DIP per finger.
    joints = [np.zeros(3)]
    for name in ["index", "middle", "pinky", "ring", "thumb"]:
        joints.extend(chains[name][:3])
    joints = np.array(joints)

    # Joint regressor: wrist = the palm latitude ring nearest the wrist
    # plane; finger joints = the 8-vertex ring centered on them.
    regressor = np.zeros((16, N_VERTICES))
    ring_x = _PALM_CENTER[0] + _PALM_AXES[0] * np.cos(
        np.pi * np.arange(1, PALM_LAT - 1) / (PALM_LAT - 1))
    wrist_row = int(np.argmin(np.abs(ring_x - 0.0))) + 1
    wrist_ids = 1 + (wrist_row - 1) * PALM_LON + np.arange(PALM_LON)
    regressor[0, wrist_ids] = 1.0 / PALM_LON
    finger_base = len(palm_verts)
    n_finger_verts = 2 + RINGS_PER_FINGER * RING_K
    for fi, name in enumerate(["index", "middle", "pinky", "ring", "thumb"]):
        base = finger_base + fi * n_finger_verts
        for jo, ring_i in enumerate([0, 3, 5]):  # rings on MCP, PIP, DIP
            ids = base + 1 + ring_i * RING_K + np.arange(RING_K)
            regressor[1 + 3 * fi + jo, ids] = 1.0 / RING_K

    # Skinning: gaussian falloff of distance to each joint's bone segment.
    bones = [(np.array([0.0, 0.0, 0.0]), _PALM_CENTER + np.array([0.03, 0.0, 0.0]))]
    for name in ["index", "middle", "pinky", "ring", "thumb"]:
        c = chains[name]
        bones.extend([(c[0], c[1]), (c[1], c[2]), (c[2], c[3])])
    d = np.stack([_segment_distances(template, a, b) for a, b in bones], axis=1)
    w = np.exp(-((d / 0.008) ** 2))
    w[:, 0] += 1e-6  # root catches vertices far from every bone
    skin_weights = w / w.sum(axis=1, keepdims=True)

    # Smooth, low-frequency shape blend shapes (~2 mm amplitude): nearly
    # affine over the hand so shape is observable from the joints, like a
    # data-driven basis would be.
    shape_basis = np.zeros((N_VERTICES, 3, 10))
    for k in range(10):
        direction = _unit(rng.normal(size=3))
        freq = rng.uniform(4.0, 12.0)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        axis = rng.normal(size=3)
        field = np.sin(freq * (template @ direction)[:, None] + phase[None, :])
        shape_basis[:, :, k] = 0.002 * field * axis[None, :]

    # Small dense pose correctives; kept tiny so posing is dominated by LBS.
    pose_basis = rng.normal(scale=5e-5, size=(N_VERTICES, 3, 135))

    pca = np.zeros((30, 45))
    for ci, mj in enumerate(PCA_CONTROLLED_JOINTS):
        for dim in range(3):
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            pca[3 * ci + dim, 3 * (mj - 1) + dim] = sign * rng.uniform(0.85, 1.2)
    pca_mean = np.zeros(45)

    fingertips = np.array([tip_ids[n] for n in ["thumb", "index", "middle", "ring", "pinky"]],
                          dtype=np.int64)

    return {
        "template_vertices": template,
        "faces": faces,
        "shape_basis": shape_basis,
        "pose_basis": pose_basis,
        "joint_regressor": regressor,
        "skin_weights": skin_weights,
        "kinematic_parents": np.array(KINEMATIC_PARENTS, dtype=np.int64),
        "pca_pose_components": pca,
        "pca_pose_mean": pca_mean,
        "fingertip_vertex_ids": fingertips,
    }


def write_portable(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    """Write arrays as a ``handmodel-v1`` JSON document (9 significant digits)."""
    doc_parts = ['{"format": "handmodel-v1"']
    for name, arr in arrays.items():
        flat = np.asarray(arr).ravel()
        if np.issubdtype(flat.dtype, np.integer):
            data = ", ".join(str(int(v)) for v in flat)
        else:
            data = ", ".join(f"{v:.9g}" for v in flat)
        shape = ", ".join(str(s) for s in arr.shape)
        doc_parts.append(f'"{name}": {{"shape": [{shape}], "data": [{data}]}}')
    Path(path).write_text(", ".join(doc_parts) + "}")


def axis_angle_from_matrix(R: np.ndarray) -> np.ndarray:
    """SO(3) log map; valid away from the pi-rotation branch."""
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    t = np.arccos(cos_t)
    if t < 1e-12:
        return np.zeros(3)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return t * axis / (2.0 * np.sin(t))


def compose_local_rotation(frame: np.ndarray, azimuth_deg: float, pitch_deg: float,
                           roll_deg: float) -> np.ndarray:
    """Inverse of the bone-angle factorization: angles -> local rotation matrix.

    ``frame`` holds the [azimuth, pitch, roll] axes as columns; the result
    factors back to exactly these angles (within float), which makes it the
    generator of skeleton-feasible test poses.
    """
    az, pi_, ro = np.deg2rad([azimuth_deg, pitch_deg, roll_deg])
    cx, sx = np.cos(az), np.sin(az)
    cy, sy = np.cos(pi_), np.sin(pi_)
    cz, sz = np.cos(ro), np.sin(ro)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return frame @ rx @ ry @ rz @ frame.T


def theta_for_joint_rotations(rotations: dict[int, np.ndarray],
                              pca: np.ndarray) -> np.ndarray:
    """Invert the toy model's axis-aligned PCA rows.

    ``rotations`` maps a model joint id from PCA_CONTROLLED_JOINTS to its
    3-vector axis-angle; returns the theta (30,) that decodes to exactly
    that full pose (all other joints stay at the zero mean).
    """
    theta = np.zeros(30)
    for mj, aa in rotations.items():
        ci = PCA_CONTROLLED_JOINTS.index(mj)
        for dim in range(3):
            coeff = pca[3 * ci + dim, 3 * (mj - 1) + dim]
            theta[3 * ci + dim] = aa[dim] / coeff
    return theta


# Controlled joint -> its bone's row in the finger-bone/prior table
# (thumb 0-2, index 3-5, middle 6-8, ring 9-11, pinky 12-14).
_BONE_ROW_OF_JOINT = {13: 0, 14: 1, 1: 3, 2: 4, 4: 6, 5: 7, 10: 9, 11: 10, 7: 12, 8: 13}


def sample_feasible_theta(rng: np.random.Generator, bone_frames: np.ndarray,
                          ranges_deg: np.ndarray, pca: np.ndarray,
                          margin: float = 0.15, amount: float = 1.0) -> np.ndarray:
    """Draw a theta whose bone angles all lie inside the feasible ranges.

    Samples (azimuth, pitch, roll) uniformly inside each controlled bone's
    range shrunk by ``margin`` on both ends and scaled by ``amount`` toward
    the rest pose, recomposes the local rotations, and inverts the
    axis-aligned PCA. Uncontrolled joints stay at rest (angles 0, on or
    inside every bound).
    """
    rots = {}
    for mj, row in _BONE_ROW_OF_JOINT.items():
        lo = ranges_deg[row, :, 0]
        hi = ranges_deg[row, :, 1]
        span = hi - lo
        a = rng.uniform(lo + margin * span, hi - margin * span) * amount
        R = compose_local_rotation(bone_frames[row], a[0], a[1], a[2])
        rots[mj] = axis_angle_from_matrix(R)
    return theta_for_joint_rotations(rots, pca)
