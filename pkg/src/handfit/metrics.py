"""Evaluation metrics: Procrustes alignment, MPJPE/MPVPE, PCK-AUC, F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGeometryError

PCK_THRESHOLDS_MM = np.linspace(0.0, 50.0, 100)


@dataclass
class EvalResult:
    mpjpe_cm: float
    mpvpe_cm: float
    auc_j: float
    auc_v: float
    f5: float
    f15: float
    aligned: bool

    def as_dict(self) -> dict:
        return dict(mpjpe_cm=self.mpjpe_cm, mpvpe_cm=self.mpvpe_cm, auc_j=self.auc_j,
                    auc_v=self.auc_v, f5=self.f5, f15=self.f15, aligned=self.aligned)


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares similarity alignment of pred onto gt (rotation, scale, translation).

    Closed form from the SVD of the centered cross-covariance; returns the
    aligned copy of pred. Raises on fewer than 3 points or a rank-deficient
    configuration.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3 or pred.shape[0] < 3:
        raise DegenerateGeometryError(f"need matching Nx3 point sets with N >= 3, got {pred.shape}")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    x = pred - mu_p
    y = gt - mu_g
    # planar sets are fine (reflection resolved by the det correction);
    # collinear/coincident sets leave the rotation underdetermined
    if np.linalg.matrix_rank(x) < 2 or np.linalg.matrix_rank(y) < 2:
        raise DegenerateGeometryError("rank-deficient point configuration")
    h = x.T @ y
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    corr = np.diag([1.0, 1.0, d])
    rot = u @ corr @ vt  # applied on the right of row vectors
    scale = (s * np.diag(corr)).sum() / (x * x).sum()
    return scale * x @ rot + mu_g


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error in centimeters."""
    d = np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1)
    return float(d.mean() * 100.0)


def mpvpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-vertex position error in centimeters."""
    return mpjpe(pred, gt)


def pck_auc(errors_mm: np.ndarray) -> float:
    """Area under the fraction-correct curve over 100 thresholds in [0, 50] mm.

    Threshold 0 is included (correct there only for exactly-zero error);
    trapezoidal integration, normalized to [0, 1].
    """
    errs = np.asarray(errors_mm, dtype=np.float64).ravel()
    pck = (errs[None, :] <= PCK_THRESHOLDS_MM[:, None]).mean(axis=1)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(pck, PCK_THRESHOLDS_MM) / PCK_THRESHOLDS_MM[-1])


def f_score(pred: np.ndarray, gt: np.ndarray, threshold_mm: float) -> float:
    """Harmonic mean of vertex precision/recall at a distance threshold."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    d = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=-1) * 1000.0
    precision = (d.min(axis=1) <= threshold_mm).mean()
    recall = (d.min(axis=0) <= threshold_mm).mean()
    if precision + recall == 0.0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def evaluate(pred_joints: np.ndarray, gt_joints: np.ndarray,
             pred_vertices: np.ndarray | None = None,
             gt_vertices: np.ndarray | None = None,
             align: bool = True) -> EvalResult:
    """Full metric suite for one frame, optionally Procrustes-aligned."""
    pj = procrustes_align(pred_joints, gt_joints) if align else np.asarray(pred_joints)
    joint_err_mm = np.linalg.norm(pj - gt_joints, axis=-1) * 1000.0
    have_verts = pred_vertices is not None and gt_vertices is not None
    if have_verts:
        pv = procrustes_align(pred_vertices, gt_vertices) if align else np.asarray(pred_vertices)
        vert_err_mm = np.linalg.norm(pv - gt_vertices, axis=-1) * 1000.0
    return EvalResult(
        mpjpe_cm=mpjpe(pj, gt_joints),
        mpvpe_cm=mpvpe(pv, gt_vertices) if have_verts else float("nan"),
        auc_j=pck_auc(joint_err_mm),
        auc_v=pck_auc(vert_err_mm) if have_verts else float("nan"),
        f5=f_score(pv, gt_vertices, 5.0) if have_verts else float("nan"),
        f15=f_score(pv, gt_vertices, 15.0) if have_verts else float("nan"),
        aligned=align,
    )
