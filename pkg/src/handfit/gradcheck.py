"""Finite-difference verification of every energy term's gradient.

Three regimes with their own tolerances:
  - keypoint/regularizer terms w.r.t. any block: rel err < 1e-4;
  - photometric terms w.r.t. colors/lighting (coverage cannot move): < 1e-6;
  - photometric terms w.r.t. geometry blocks: < 1e-2, checked only on
    perturbations that keep the per-pixel covering-face map fixed
    (occlusion-boundary changes carry no gradient by contract).

Each term is differentiated in isolation so the comparison is not
drowned by float cancellation against unrelated terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .camera import Intrinsics, Keypoints2D
from .energies import SkeletonPrior, Weights
from .fitting import BLOCK_SLICES, FitState, ParamMask, default_init, gradient
from .hand_model import HandModel, forward_geometry
from .renderer import render

GEOMETRY_BLOCKS = ("theta", "beta", "scale", "rot", "trans")
APPEARANCE_BLOCKS = ("colors", "lighting")

# term -> blocks it can depend on
LIGHT_TERMS = {
    "loc": GEOMETRY_BLOCKS,
    "ori": GEOMETRY_BLOCKS,
    "beta": ("beta",),
    "tex": ("colors",),
    "scale": GEOMETRY_BLOCKS,
    "skel": ("theta",),
    "con": GEOMETRY_BLOCKS,
    "joints3d": GEOMETRY_BLOCKS,
}
PHOTO_TERMS = ("pixel", "ssim")

TOL_LIGHT = 1e-4
TOL_APPEARANCE = 1e-6
TOL_RASTER_GEOMETRY = 1e-2


@dataclass
class CheckRow:
    term: str
    block: str
    max_rel_err: float
    tolerance: float
    checked_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def random_scene(model: HandModel, size: int, seed: int):
    """A random fit state + observations for one gradcheck configuration."""
    gen = torch.Generator().manual_seed(seed)
    r = lambda *shape: torch.randn(*shape, generator=gen, dtype=torch.float64)
    u = lambda *shape: torch.rand(*shape, generator=gen, dtype=torch.float64)

    K = Intrinsics(fx=2.0 * size, fy=2.0 * size, cx=(size - 1) / 2.0,
                   cy=(size - 1) / 2.0, width=size, height=size)
    state = default_init(trans_z=0.45)
    state.theta = 0.1 * r(30)
    state.beta = 0.2 * r(10)
    state.rot = 0.25 * r(3)
    state.trans = state.trans + 0.02 * r(3)
    state.colors = (state.colors + 0.06 * r(778, 3)).clamp(0.1, 0.8)
    # keep shading mostly below the clamp so the regime stays smooth
    state.lighting = torch.cat([
        0.45 + 0.1 * u(1), 0.8 + 0.2 * u(3),
        0.45 + 0.1 * u(1), 0.8 + 0.2 * u(3),
        r(3) * 0.5 + torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64),
    ])
    detected = Keypoints2D(points=u(21, 2) * size,
                           confidence=0.2 + 0.8 * u(21))
    estimated = u(21, 2) * size
    image = u(size, size, 3)
    geometry = forward_geometry(state.hand_params(), model)
    gt_joints3d = (geometry.joints21 + 0.01 * r(21, 3)).detach()
    return state, K, detected, estimated, image, gt_joints3d


def _coords(block: str, n: int, gen: torch.Generator) -> list[int]:
    sl = BLOCK_SLICES[block]
    size = sl.stop - sl.start
    if size <= n:
        return list(range(sl.start, sl.stop))
    pick = torch.randperm(size, generator=gen)[:n]
    return [sl.start + int(i) for i in pick]


def run_gradcheck(model: HandModel, prior: SkeletonPrior, weights: Weights | None = None,
                  size: int = 64, seed: int = 0, configs: int = 3,
                  coords_per_block: int = 4, eps: float = 1e-6,
                  eps_colors: float = 3e-4, eps_lighting: float = 3e-5) -> list[CheckRow]:
    """FD-vs-analytic errors for every (term, block) pair across configs."""
    from .energies import e_total

    weights = weights if weights is not None else Weights()
    worst: dict[tuple[str, str], tuple[float, int]] = {}

    def note(term, block, rel):
        err, cnt = worst.get((term, block), (0.0, 0))
        worst[(term, block)] = (max(err, rel), cnt + 1)

    for cfg in range(configs):
        state, K, detected, estimated, image, gt3d = random_scene(model, size, 1000 * seed + cfg)
        gen = torch.Generator().manual_seed(7000 + cfg)

        def light_objective(s: FitState):
            geometry = forward_geometry(s.hand_params(), model)
            from .camera import project
            projected = project(geometry.joints21, K)
            return e_total(weights=weights, detected=detected, projected=projected,
                           estimated=estimated, theta=s.theta, beta=s.beta,
                           colors=s.colors, geometry=geometry, model=model,
                           prior=prior, gt_joints3d=gt3d)

        def photo_objective(s: FitState):
            geometry = forward_geometry(s.hand_params(), model)
            out = render(geometry, s.appearance(), model.faces, K)
            return e_total(weights=weights, image=image, render_out=out,
                           con_sum=detected.con_sum)

        def face_map(s: FitState):
            with torch.no_grad():
                geometry = forward_geometry(s.hand_params(), model)
                return render(geometry, s.appearance(), model.faces, K).face_index

        # keypoint + regularizer terms against every block they touch
        analytic_light = {}
        for term, blocks in LIGHT_TERMS.items():
            analytic_light[term] = gradient(light_objective, state,
                                            ParamMask.of(*blocks), term=term)
        base = state.flat()
        for block in ("theta", "beta", "scale", "rot", "trans", "colors"):
            for c in _coords(block, coords_per_block, gen):
                vec = base.clone(); vec[c] += eps
                bd_p = light_objective(state.with_flat(vec))
                vec = base.clone(); vec[c] -= eps
                bd_m = light_objective(state.with_flat(vec))
                for term, blocks in LIGHT_TERMS.items():
                    if block not in blocks:
                        continue
                    numeric = (float(getattr(bd_p, term)) - float(getattr(bd_m, term))) / (2 * eps)
                    ga = float(analytic_light[term][c])
                    note(term, block, abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric)))

        # photometric terms: exact for appearance, interior-only for geometry
        analytic_photo = {}
        all_mask = ParamMask.of(*(GEOMETRY_BLOCKS + APPEARANCE_BLOCKS))
        for term in PHOTO_TERMS:
            analytic_photo[term] = gradient(photo_objective, state, all_mask, term=term)
        base_faces = face_map(state)
        for block in GEOMETRY_BLOCKS + APPEARANCE_BLOCKS:
            raster_geom = block in GEOMETRY_BLOCKS
            # appearance cannot move coverage, so a larger step is safe and
            # keeps the finite difference above float cancellation noise;
            # lighting needs a smaller one (normalize/Lambert curvature)
            h = eps if raster_geom else (eps_colors if block == "colors" else eps_lighting)
            for c in _coords(block, coords_per_block if not raster_geom else 3, gen):
                vec = base.clone(); vec[c] += h
                plus = state.with_flat(vec)
                vec = base.clone(); vec[c] -= h
                minus = state.with_flat(vec)
                if raster_geom:
                    if not (torch.equal(face_map(plus), base_faces)
                            and torch.equal(face_map(minus), base_faces)):
                        continue  # coverage moved: no gradient by contract
                bd_p = photo_objective(plus)
                bd_m = photo_objective(minus)
                for term in PHOTO_TERMS:
                    numeric = (float(getattr(bd_p, term)) - float(getattr(bd_m, term))) / (2 * h)
                    ga = float(analytic_photo[term][c])
                    note(term, block, abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric)))

    rows = []
    for (term, block), (err, cnt) in sorted(worst.items()):
        if term in PHOTO_TERMS:
            tol = TOL_RASTER_GEOMETRY if block in GEOMETRY_BLOCKS else TOL_APPEARANCE
        else:
            tol = TOL_LIGHT
        rows.append(CheckRow(term=term, block=block, max_rel_err=err,
                             tolerance=tol, checked_coords=cnt))
    return rows
