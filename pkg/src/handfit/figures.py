"""Matplotlib report figures written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def energy_trace_figure(trace: list[dict], path: str | Path) -> None:
    """Log-scale curves of the main energy groups over all iterations."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    xs = np.arange(len(trace))
    for key, style in [("total", "-"), ("geo", "--"), ("photo", ":"), ("regu", "-.")]:
        ys = np.array([row[key] for row in trace])
        ax.plot(xs, np.maximum(ys, 1e-12), style, label=key, linewidth=1.2)
    bounds = [i for i in range(1, len(trace)) if trace[i]["stage"] != trace[i - 1]["stage"]]
    for b in bounds:
        ax.axvline(b, color="gray", alpha=0.25, linewidth=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("fit energy trace")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def keypoint_overlay_figure(image, detected, projected, path: str | Path) -> None:
    """Rendered or input image with detected vs projected keypoints."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(np.clip(np.asarray(image), 0, 1))
    det = np.asarray(detected)
    pro = np.asarray(projected)
    ax.scatter(det[:, 0], det[:, 1], s=14, c="lime", marker="o", label="detected")
    ax.scatter(pro[:, 0], pro[:, 1], s=14, c="red", marker="x", label="projected")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def pck_curve_figure(thresholds_mm, pck, auc: float, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(thresholds_mm, pck, "-", linewidth=1.5)
    ax.set_xlabel("threshold (mm)")
    ax.set_ylabel("fraction of correct keypoints")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"PCK curve (AUC = {auc:.3f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
