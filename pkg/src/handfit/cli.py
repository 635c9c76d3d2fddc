"""Command-line front end: fit, render, evaluate, gradcheck, make-toy-model.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 gradient
tolerance failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .camera import Intrinsics, load_intrinsics, project
from .config import FitConfig, load_config
from .energies import SkeletonPrior, default_skeleton_prior, load_skeleton_prior
from .exceptions import (
    ConfigError,
    DegenerateDepthError,
    DegenerateGeometryError,
    DegenerateLightError,
    FitAbortError,
    HandfitError,
    KeypointFormatError,
    ModelFormatError,
    NumericalEnergyError,
)
from .fitting import ParamMask, check_gradient, default_init, fit, gradient
from .hand_model import HandModel, forward_geometry, load_model
from .io import (
    crop_resize,
    export_obj,
    load_image,
    load_params,
    parse_keypoints,
    save_image,
    save_params,
)
from .metrics import PCK_THRESHOLDS_MM, evaluate, pck_auc, procrustes_align
from .renderer import render

BAD_INPUT, NUMERICAL, TOLERANCE = 2, 3, 4

_INPUT_ERRORS = (ConfigError, KeypointFormatError, ModelFormatError,
                 FileNotFoundError, ValueError, OSError)
_NUMERIC_ERRORS = (NumericalEnergyError, FitAbortError, DegenerateDepthError,
                   DegenerateGeometryError, DegenerateLightError)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_model(args, cfg: FitConfig) -> tuple[HandModel, Path]:
    path = args.model or cfg.model_path
    if path is None:
        raise ConfigError("no model file: pass --model or set paths.model in the config")
    return load_model(path), Path(path)


def _resolve_prior(args, cfg: FitConfig) -> SkeletonPrior:
    path = getattr(args, "skeleton_prior", None) or cfg.skeleton_prior_path
    return load_skeleton_prior(path) if path else default_skeleton_prior()


def _fit_one(image_path: Path, keypoint_path: Path, out_dir: Path, args,
             cfg: FitConfig, model: HandModel, model_path: Path,
             prior: SkeletonPrior) -> dict:
    K = load_intrinsics(args.intrinsics)
    detected = parse_keypoints(keypoint_path, args.joint_order)
    image = load_image(image_path)
    bbox = tuple(float(t) for t in args.bbox.split(",")) if args.bbox else None
    if bbox is not None and len(bbox) != 4:
        raise ConfigError("--bbox needs x,y,w,h")
    image, K = crop_resize(image, bbox, cfg.render_size, K)
    if bbox is not None:
        # keypoints live in the original pixel grid; move them with the crop
        sx = cfg.render_size / bbox[2]
        sy = cfg.render_size / bbox[3]
        pts = detected.points.clone()
        pts[:, 0] = (pts[:, 0] - bbox[0]) * sx
        pts[:, 1] = (pts[:, 1] - bbox[1]) * sy
        detected.points = pts

    estimated = None
    if args.estimated:
        estimated = parse_keypoints(args.estimated, args.joint_order).points

    seed = cfg.seed if args.seed is None else args.seed
    report = fit(image, detected, K, model, cfg.weights, cfg.schedule,
                 init=cfg.init, prior=prior, estimated=estimated,
                 normalize_confidence=cfg.normalize_confidence, seed=seed)

    out_dir.mkdir(parents=True, exist_ok=True)
    from .fitting import FitState
    state = FitState(theta=report.params.theta, beta=report.params.beta,
                     scale=report.params.scale.reshape(1), rot=report.params.rot,
                     trans=report.params.trans, colors=report.appearance.colors,
                     lighting=report.appearance.lighting)
    save_params(state, out_dir / "params.json")

    geometry = forward_geometry(report.params, model)
    export_obj(geometry, report.appearance.colors, model.faces, out_dir / "mesh.obj")
    out = render(geometry, report.appearance, model.faces, K)
    save_image(out.color, out_dir / "render.png")
    save_image(out.silhouette, out_dir / "silhouette.png")

    keys = ["stage", "iteration", "lr", "loc", "ori", "geo", "pixel", "ssim", "photo",
            "beta", "tex", "scale", "skel", "regu", "e2d", "con", "joints3d", "e3d", "total"]
    with open(out_dir / "energy_trace.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        for row in report.trace:
            writer.writerow({k: row[k] for k in keys})

    summary = {
        "converged": report.converged,
        "seconds": report.seconds,
        "restarts": report.restarts,
        "iterations": len(report.trace),
        "initial_total": report.initial_total,
        "final_total": report.final_total,
        "final_terms": {k: report.trace[-1][k] for k in keys if k not in ("stage", "iteration", "lr")},
    }
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2))

    manifest = {
        "code_version": __version__,
        "seed": seed,
        "config_sha256": cfg.source_sha256,
        "inputs": {
            "image": _sha256(image_path),
            "keypoints": _sha256(keypoint_path),
            "intrinsics": _sha256(Path(args.intrinsics)),
            "model": _sha256(model_path),
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))

    from .figures import energy_trace_figure, keypoint_overlay_figure
    energy_trace_figure(report.trace, out_dir / "fit_summary.png")
    keypoint_overlay_figure(image.numpy(), detected.points.numpy(),
                            project(geometry.joints21, K).detach().numpy(),
                            out_dir / "keypoints_overlay.png")
    return summary


def _fit_worker(job):
    image_path, keypoint_path, out_dir, args_dict, config_path = job
    args = argparse.Namespace(**args_dict)
    cfg = load_config(config_path) if config_path else FitConfig()
    model, model_path = _resolve_model(args, cfg)
    prior = _resolve_prior(args, cfg)
    return _fit_one(Path(image_path), Path(keypoint_path), Path(out_dir), args,
                    cfg, model, model_path, prior)


def cmd_fit(args) -> int:
    cfg = load_config(args.config) if args.config else FitConfig()
    image_path = Path(args.image)
    out_root = Path(args.out)

    if image_path.is_dir():
        kp_dir = Path(args.keypoints)
        if not kp_dir.is_dir():
            raise ConfigError("--keypoints must be a directory when --image is one")
        images = sorted(p for p in image_path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        jobs = []
        for img in images:
            kp = kp_dir / (img.stem + ".json")
            if not kp.exists():
                raise ConfigError(f"no keypoint file for {img.name} (expected {kp})")
            jobs.append((str(img), str(kp), str(out_root / img.stem), vars(args), args.config))
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                list(pool.map(_fit_worker, jobs))
        else:
            for job in jobs:
                _fit_worker(job)
        print(f"fit {len(jobs)} image(s) -> {out_root}")
        return 0

    model, model_path = _resolve_model(args, cfg)
    prior = _resolve_prior(args, cfg)
    summary = _fit_one(image_path, Path(args.keypoints), out_root, args, cfg,
                       model, model_path, prior)
    print(f"fit done in {summary['seconds']:.1f}s; total {summary['initial_total']:.4g}"
          f" -> {summary['final_total']:.4g}; artifacts in {out_root}")
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config) if args.config else FitConfig()
    model, _ = _resolve_model(args, cfg)
    state = load_params(args.params)
    K = load_intrinsics(args.intrinsics)
    if args.size:
        K = K.scaled(args.size, args.size)
    geometry = forward_geometry(state.hand_params(), model)
    out = render(geometry, state.appearance(), model.faces, K)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(out.color, out_dir / "render.png")
    save_image(out.silhouette, out_dir / "silhouette.png")
    export_obj(geometry, state.colors, model.faces, out_dir / "mesh.obj")
    print(f"rendered {K.width}x{K.height} -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config) if args.config else FitConfig()
    model, _ = _resolve_model(args, cfg)
    pred_state = load_params(args.pred)
    pred_geo = forward_geometry(pred_state.hand_params(), model)
    pred_joints = pred_geo.joints21.detach().numpy()
    pred_verts = pred_geo.vertices.detach().numpy()

    with open(args.gt) as f:
        gt_doc = json.load(f)
    if "theta" in gt_doc:
        gt_state = load_params(args.gt)
        gt_geo = forward_geometry(gt_state.hand_params(), model)
        gt_joints = gt_geo.joints21.detach().numpy()
        gt_verts = gt_geo.vertices.detach().numpy()
    else:
        gt_joints = np.asarray(gt_doc["joints21"], dtype=np.float64)
        gt_verts = (np.asarray(gt_doc["vertices"], dtype=np.float64)
                    if "vertices" in gt_doc else None)

    result = evaluate(pred_joints, gt_joints, pred_verts if gt_verts is not None else None,
                      gt_verts, align=not args.no_align)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(result.as_dict(), indent=2))

    aligned = procrustes_align(pred_joints, gt_joints) if not args.no_align else pred_joints
    errors_mm = np.linalg.norm(aligned - gt_joints, axis=1) * 1000.0
    pck = (errors_mm[None, :] <= PCK_THRESHOLDS_MM[:, None]).mean(axis=1)
    with open(out_dir / "pck_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold_mm", "pck"])
        for t, p in zip(PCK_THRESHOLDS_MM, pck):
            writer.writerow([f"{t:.6g}", f"{p:.6g}"])
    from .figures import pck_curve_figure
    pck_curve_figure(PCK_THRESHOLDS_MM, pck, pck_auc(errors_mm), out_dir / "pck_curve.png")
    print(json.dumps(result.as_dict(), indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else FitConfig()
    if args.model or cfg.model_path:
        model, _ = _resolve_model(args, cfg)
    else:
        from .toy_model import generate_toy_model, write_portable
        import tempfile
        with tempfile.NamedTemporaryFile(suffix=".json", delete=False) as tmp:
            write_portable(generate_toy_model(), tmp.name)
            model = load_model(tmp.name)
    prior = _resolve_prior(args, cfg)

    from .gradcheck import run_gradcheck
    rows = run_gradcheck(model, prior, cfg.weights, size=args.size, seed=args.seed,
                         configs=args.configs)
    failed = False
    print(f"{'term':<10} {'block':<10} {'max rel err':>12} {'tol':>8} {'coords':>7}")
    for row in rows:
        status = "ok" if row.passed else "FAIL"
        failed = failed or not row.passed
        print(f"{row.term:<10} {row.block:<10} {row.max_rel_err:>12.3e}"
              f" {row.tolerance:>8.0e} {row.checked_coords:>7}  {status}")
    return TOLERANCE if failed else 0


def cmd_make_toy_model(args) -> int:
    from .toy_model import generate_toy_model, write_portable
    write_portable(generate_toy_model(args.seed), args.out)
    print(f"toy model written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handfit",
                                description="Textured 3D hand fitting from an image + 2D keypoints")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit hand parameters to an image + keypoints")
    f.add_argument("--image", required=True, help="input image (or directory)")
    f.add_argument("--keypoints", required=True, help="detected keypoint JSON (or directory)")
    f.add_argument("--intrinsics", required=True, help="camera intrinsics JSON")
    f.add_argument("--config", default=None, help="fit config TOML")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--model", default=None, help="portable hand model file")
    f.add_argument("--skeleton-prior", dest="skeleton_prior", default=None)
    f.add_argument("--estimated", default=None, help="second (estimated) keypoint JSON")
    f.add_argument("--bbox", default=None, help="crop x,y,w,h before fitting")
    f.add_argument("--joint-order", default="openpose")
    f.add_argument("--jobs", type=int, default=1, help="parallel fits for directory input")
    f.add_argument("--seed", type=int, default=None)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="re-render a fitted params.json")
    r.add_argument("--params", required=True)
    r.add_argument("--intrinsics", required=True)
    r.add_argument("--model", default=None)
    r.add_argument("--config", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--size", type=int, default=None)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("evaluate", help="compare a fit against ground truth")
    e.add_argument("--pred", required=True, help="fitted params.json")
    e.add_argument("--gt", required=True, help="ground-truth JSON (params or joints21/vertices)")
    e.add_argument("--model", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--no-align", action="store_true", help="skip Procrustes alignment")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", help="finite-difference check of the energy gradient")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--configs", type=int, default=3)
    g.add_argument("--model", default=None)
    g.add_argument("--config", default=None)
    g.add_argument("--skeleton-prior", dest="skeleton_prior", default=None)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("make-toy-model", help="write the synthetic CI hand model")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=20240217)
    t.set_defaults(func=cmd_make_toy_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return NUMERICAL
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
