"""Energy terms and the total objective.

The total energy combines a keypoint branch (location + bone orientation),
a photometric branch (masked L1 color + SSIM), statistical regularizers
(shape, texture outliers, bone-scale, joint-angle feasibility), and the
optional estimated-keypoint and 2D-3D consistency terms. Every term is
nonnegative, zero at its documented fixed point, and differentiable
through torch autograd.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import torch
import torch.nn.functional as F

from .camera import Keypoints2D
from .exceptions import DegenerateLightError, NumericalEnergyError
from .hand_model import ALL_BONES, FINGER_BONES, MODEL_JOINT_OF, HandGeometry, HandModel, pose_from_pca, rodrigues
from .renderer import RenderOutput

# Target length of the middle-finger proximal phalanx (bone 9->10), meters.
BONE_LENGTH_TARGET_M = 0.0282

SMOOTH_L1_DELTA = 1.0  # pixels

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class Weights:
    """Term weights; defaults follow the published configuration."""

    w_3d: float = 1.0
    w_2d: float = 0.001
    w_con: float = 0.0002
    w_geo: float = 0.001
    w_photo: float = 0.005
    w_regu: float = 0.01
    w_ori: float = 100.0
    w_ssim: float = 0.2
    w_c: float = 0.5
    w_s: float = 10000.0
    w_j: float = 10.0
    w_3dj: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0.0 and v == v and v != float("inf")):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    def replace(self, **kw) -> "Weights":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Weights(**d)


@dataclass(frozen=True)
class SkeletonPrior:
    """Feasible (azimuth, pitch, roll) ranges per finger bone, degrees."""

    bones: tuple          # 15 (parent, child) pairs, 21-keypoint ids
    ranges: torch.Tensor  # (15, 3, 2) [min, max]

    def __post_init__(self):
        if len(self.bones) != 15 or tuple(self.ranges.shape) != (15, 3, 2):
            raise ValueError("prior must define 15 bones x 3 angle ranges")
        if not bool((self.ranges[..., 0] < self.ranges[..., 1]).all()):
            raise ValueError("every range needs min < max")
        if tuple(self.bones) != tuple(FINGER_BONES):
            raise ValueError("prior bones must match the finger-bone layout")


def load_skeleton_prior(path: str | Path) -> SkeletonPrior:
    with open(path) as f:
        doc = json.load(f)
    bones, ranges = [], []
    for entry in doc["bones"]:
        bones.append(tuple(entry["bone"]))
        ranges.append([entry["azimuth"], entry["pitch"], entry["roll"]])
    return SkeletonPrior(bones=tuple(bones),
                         ranges=torch.tensor(ranges, dtype=torch.float64))


def default_skeleton_prior() -> SkeletonPrior:
    return load_skeleton_prior(Path(__file__).parent / "assets" / "skeleton_prior_v1.json")


@dataclass
class EnergyBreakdown:
    """All term values (0-dim tensors) plus the composed totals.

    ``total`` always recomposes from the parts under the weights it was
    built with; terms whose inputs were not supplied are zero.
    """

    loc: torch.Tensor
    ori: torch.Tensor
    geo: torch.Tensor
    pixel: torch.Tensor
    ssim: torch.Tensor
    photo: torch.Tensor
    beta: torch.Tensor
    tex: torch.Tensor
    scale: torch.Tensor
    skel: torch.Tensor
    regu: torch.Tensor
    e2d: torch.Tensor
    con: torch.Tensor
    joints3d: torch.Tensor
    e3d: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}

    def assert_finite(self) -> None:
        for f in fields(self):
            v = float(getattr(self, f.name).detach())
            if v != v or v in (float("inf"), -float("inf")):
                raise NumericalEnergyError(f.name, v)


def smooth_l1(residual: torch.Tensor, delta: float = SMOOTH_L1_DELTA) -> torch.Tensor:
    """Huber-style penalty, elementwise: quadratic below delta, linear above."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = residual.abs()
    return torch.where(a < delta, 0.5 * residual * residual / delta, a - 0.5 * delta)


def _smooth_l1_points(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-point penalty for (N, 2) pixel sets: mean over the 2 coordinates."""
    return smooth_l1(a - b).mean(dim=1)


def e_loc(detected: Keypoints2D, projected: torch.Tensor) -> torch.Tensor:
    """Confidence-weighted keypoint location loss."""
    if projected.shape != detected.points.shape:
        raise ValueError(f"projected shape {tuple(projected.shape)} != 21x2")
    per_point = _smooth_l1_points(detected.points, projected)
    return (detected.confidence * per_point).mean()


def _bone_vectors(points: torch.Tensor) -> torch.Tensor:
    idx = torch.tensor(ALL_BONES)
    return points[idx[:, 1]] - points[idx[:, 0]]


def e_ori(detected: Keypoints2D, projected: torch.Tensor) -> torch.Tensor:
    """Bone orientation loss over the 20 bones (5 palm + 15 finger).

    Bone weight is the product of its endpoint confidences; a bone whose
    detected or projected 2D length is (near-)zero is skipped with
    weight 0 (its direction is undefined).
    """
    idx = torch.tensor(ALL_BONES)
    d_vec = _bone_vectors(detected.points)
    p_vec = _bone_vectors(projected)
    d_len = torch.linalg.norm(d_vec, dim=1)
    p_len = torch.linalg.norm(p_vec, dim=1)
    valid = (d_len > 1e-12) & (p_len > 1e-12)
    w = detected.confidence[idx[:, 0]] * detected.confidence[idx[:, 1]] * valid.to(d_vec.dtype)
    safe = lambda v, n: v / torch.where(n > 1e-12, n, torch.ones_like(n)).unsqueeze(1)
    diff = safe(d_vec, d_len) - safe(p_vec, p_len)
    return (w * (diff * diff).sum(dim=1)).sum() / len(ALL_BONES)


def e_geo(detected: Keypoints2D, projected: torch.Tensor, w_ori: float) -> torch.Tensor:
    return e_loc(detected, projected) + w_ori * e_ori(detected, projected)


def e_pixel(image: torch.Tensor, render: RenderOutput, con_sum: torch.Tensor | float) -> torch.Tensor:
    """Mean per-pixel RGB distance over the rendered silhouette, scaled by con_sum."""
    if image.shape != render.color.shape:
        raise ValueError(f"image {tuple(image.shape)} vs render {tuple(render.color.shape)}")
    mask = render.silhouette
    n_vis = mask.sum()
    if float(n_vis) == 0.0:
        return torch.zeros((), dtype=image.dtype)
    d = image - render.color
    ss = (d * d).sum(dim=-1)
    # keep the value exactly 0 and the gradient finite where the residual is 0
    norm = torch.sqrt(torch.where(ss > 0, ss, torch.ones_like(ss))) * (ss > 0)
    return con_sum * (norm * mask).sum() / n_vis


def _gaussian_1d(dtype) -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2.0
    x = torch.arange(SSIM_WINDOW, dtype=dtype) - half
    g = torch.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _gauss_filter(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    # separable gaussian, valid windows only
    return F.conv2d(F.conv2d(x, g.reshape(1, 1, -1, 1)), g.reshape(1, 1, 1, -1))


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean structural similarity of two (H, W, 3) images in [0, 1].

    11x11 gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1;
    per channel, valid windows only (no padding).
    """
    if a.shape != b.shape:
        raise ValueError("SSIM inputs must share a shape")
    h, w = a.shape[0], a.shape[1]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}-pixel SSIM window")
    win = _gaussian_1d(a.dtype)
    x = a.permute(2, 0, 1).unsqueeze(1)  # (3, 1, H, W)
    y = b.permute(2, 0, 1).unsqueeze(1)
    mu_x = _gauss_filter(x, win)
    mu_y = _gauss_filter(y, win)
    var_x = _gauss_filter(x * x, win) - mu_x * mu_x
    var_y = _gauss_filter(y * y, win) - mu_y * mu_y
    cov = _gauss_filter(x * y, win) - mu_x * mu_y
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def e_ssim(image: torch.Tensor, render: RenderOutput) -> torch.Tensor:
    """1 - SSIM between the silhouette-masked input and the rendered image."""
    masked = image * render.silhouette.unsqueeze(-1)
    return 1.0 - ssim(masked, render.color)


def e_photo(image: torch.Tensor, render: RenderOutput, con_sum, w_ssim: float) -> torch.Tensor:
    return e_pixel(image, render, con_sum) + w_ssim * e_ssim(image, render)


def e_beta(beta: torch.Tensor) -> torch.Tensor:
    """Squared-norm shape regularizer about the average shape 0."""
    return beta.dot(beta)


def e_texture(colors: torch.Tensor, con_sum) -> torch.Tensor:
    """Penalize vertex colors outside the 2-sigma band of the mean skin tone.

    A vertex is inside only if every channel lies strictly within
    (mean - 2 std, mean + 2 std); outliers pay squared distance to the mean.
    """
    # shifted moments: exact zero deviations for uniform colors
    anchor = colors[0].detach()
    rel = colors - anchor
    rel_mean = rel.mean(dim=0)
    d = rel - rel_mean
    std = torch.sqrt((d * d).mean(dim=0))
    inside = ((d > -2.0 * std) & (d < 2.0 * std)).all(dim=1)
    per_vertex = (d * d).sum(dim=1) * (~inside).to(colors.dtype)
    return con_sum * per_vertex.sum() / colors.shape[0]


def e_scale(geometry: HandGeometry) -> torch.Tensor:
    """Keep the middle proximal phalanx near its average length."""
    bone = geometry.joints21[10] - geometry.joints21[9]
    l = torch.linalg.norm(bone)
    return (l - BONE_LENGTH_TARGET_M) ** 2


def bone_angles(theta: torch.Tensor, model: HandModel) -> tuple[torch.Tensor, torch.Tensor]:
    """Relative (azimuth, pitch, roll) of each finger bone, degrees.

    Each posable joint's local rotation from the decoded pose is expressed
    in its template bone frame and factored as intrinsic rotations about
    the azimuth, pitch, and roll axes in that order; the identity rotation
    maps to exactly (0, 0, 0). Returns (angles (15, 3), gimbal-lock flags
    (15,)); at gimbal lock roll is folded into azimuth and flagged.
    """
    full_pose = pose_from_pca(theta, model)
    angles = []
    flags = []
    for bi, (a, _b) in enumerate(FINGER_BONES):
        mj = MODEL_JOINT_OF[a]
        seg = full_pose[3 * (mj - 1): 3 * mj]
        if not seg.requires_grad and float(seg.abs().sum()) == 0.0:
            angles.append(torch.zeros(3, dtype=full_pose.dtype))
            flags.append(False)
            continue
        B = model.finger_bone_frames[bi]
        A = B.T @ rodrigues(seg) @ B
        s_pitch = torch.clamp(A[0, 2], -1.0, 1.0)
        pitch = torch.asin(s_pitch)
        if float(s_pitch.detach().abs()) > 1.0 - 1e-9:
            azimuth = torch.atan2(A[1, 0], A[1, 1])
            roll = torch.zeros((), dtype=full_pose.dtype)
            flags.append(True)
        else:
            azimuth = torch.atan2(-A[1, 2], A[2, 2])
            roll = torch.atan2(-A[0, 1], A[0, 0])
            flags.append(False)
        angles.append(torch.stack([azimuth, pitch, roll]) * (180.0 / torch.pi))
    return torch.stack(angles), torch.tensor(flags)


def e_skeleton(theta: torch.Tensor, model: HandModel, prior: SkeletonPrior) -> torch.Tensor:
    """Mean over bones of the degrees by which angles leave their feasible range."""
    angles, _ = bone_angles(theta, model)
    lo = prior.ranges[..., 0]
    hi = prior.ranges[..., 1]
    penalty = torch.clamp(lo - angles, min=0.0) + torch.clamp(angles - hi, min=0.0)
    return penalty.sum(dim=1).mean()


def e_regu(beta: torch.Tensor, colors: torch.Tensor, geometry: HandGeometry,
           theta: torch.Tensor, model: HandModel, prior: SkeletonPrior,
           weights: Weights, con_sum) -> torch.Tensor:
    return (e_beta(beta)
            + weights.w_c * e_texture(colors, con_sum)
            + weights.w_s * e_scale(geometry)
            + weights.w_j * e_skeleton(theta, model, prior))


def e_2d(detected: Keypoints2D, estimated: torch.Tensor) -> torch.Tensor:
    """Location loss against an independently estimated keypoint set."""
    return e_loc(detected, estimated)


def e_con(projected: torch.Tensor, estimated: torch.Tensor) -> torch.Tensor:
    """2D-3D consistency between projected and estimated keypoints (no confidence)."""
    if projected.shape != estimated.shape:
        raise ValueError("keypoint sets must share a shape")
    return _smooth_l1_points(projected, estimated).mean()


def e_joints3d(joints: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean squared 3D joint distance (supervised test mode only)."""
    d = joints - gt
    return (d * d).sum(dim=1).mean()


def e_total(*, weights: Weights,
            detected: Keypoints2D | None = None,
            projected: torch.Tensor | None = None,
            estimated: torch.Tensor | None = None,
            image: torch.Tensor | None = None,
            render_out: RenderOutput | None = None,
            theta: torch.Tensor | None = None,
            beta: torch.Tensor | None = None,
            colors: torch.Tensor | None = None,
            geometry: HandGeometry | None = None,
            model: HandModel | None = None,
            prior: SkeletonPrior | None = None,
            gt_joints3d: torch.Tensor | None = None,
            con_sum: torch.Tensor | float | None = None) -> EnergyBreakdown:
    """Evaluate every available term and compose the total.

    Terms whose inputs are absent evaluate to 0 and drop out of the
    total; the estimated-keypoint terms only enter when an estimated set
    is supplied, and the 3D joint term only in supervised test mode.
    """
    zero = torch.zeros((), dtype=torch.float64)
    if con_sum is None and detected is not None:
        con_sum = detected.con_sum

    loc = ori = zero
    if detected is not None and projected is not None:
        loc = e_loc(detected, projected)
        ori = e_ori(detected, projected)
    geo = loc + weights.w_ori * ori

    pixel = ssim_term = zero
    if image is not None and render_out is not None:
        if con_sum is None:
            raise ValueError("photometric terms need con_sum (or a detected set)")
        pixel = e_pixel(image, render_out, con_sum)
        ssim_term = e_ssim(image, render_out)
    photo = pixel + weights.w_ssim * ssim_term

    beta_term = tex = scale_term = skel = zero
    if beta is not None:
        beta_term = e_beta(beta)
    if colors is not None:
        if con_sum is None:
            raise ValueError("texture regularizer needs con_sum (or a detected set)")
        tex = e_texture(colors, con_sum)
    if geometry is not None:
        scale_term = e_scale(geometry)
    if theta is not None and model is not None and prior is not None:
        skel = e_skeleton(theta, model, prior)
    regu = beta_term + weights.w_c * tex + weights.w_s * scale_term + weights.w_j * skel

    e2d_term = con_term = zero
    if estimated is not None:
        if detected is not None:
            e2d_term = e_2d(detected, estimated)
        if projected is not None:
            con_term = e_con(projected, estimated)

    joints3d_term = zero
    if gt_joints3d is not None and geometry is not None:
        joints3d_term = e_joints3d(geometry.joints21, gt_joints3d)

    e3d = weights.w_geo * geo + weights.w_photo * photo + weights.w_regu * regu
    total = (weights.w_3d * e3d + weights.w_2d * e2d_term + weights.w_con * con_term
             + weights.w_3dj * joints3d_term)
    return EnergyBreakdown(loc=loc, ori=ori, geo=geo, pixel=pixel, ssim=ssim_term,
                           photo=photo, beta=beta_term, tex=tex, scale=scale_term,
                           skel=skel, regu=regu, e2d=e2d_term, con=con_term,
                           joints3d=joints3d_term, e3d=e3d, total=total)
