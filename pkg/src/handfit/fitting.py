"""Gradients of the total energy, Adam, and the staged per-image fit.

Reverse-mode differentiation is delegated to torch autograd over the
decode -> project/render -> energy graph; this module owns the parameter
flattening, masking, the finite-difference checker, the Adam update, and
the stage schedule with its degenerate-depth restart policy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import torch

from .camera import Intrinsics, Keypoints2D, project
from .energies import EnergyBreakdown, SkeletonPrior, Weights, default_skeleton_prior, e_total
from .exceptions import DegenerateDepthError, FitAbortError
from .hand_model import HandModel, HandParams, forward_geometry
from .renderer import Appearance, render

BLOCKS = ("theta", "beta", "scale", "rot", "trans", "colors", "lighting")
BLOCK_SIZES = {"theta": 30, "beta": 10, "scale": 1, "rot": 3, "trans": 3,
               "colors": 2334, "lighting": 11}
N_PARAMS = sum(BLOCK_SIZES.values())


@dataclass
class ParamMask:
    theta: bool = False
    beta: bool = False
    scale: bool = False
    rot: bool = False
    trans: bool = False
    colors: bool = False
    lighting: bool = False

    def __post_init__(self):
        if not any(getattr(self, b) for b in BLOCKS):
            raise ValueError("at least one parameter block must be enabled")

    @staticmethod
    def of(*names: str) -> "ParamMask":
        unknown = set(names) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown parameter blocks: {sorted(unknown)}")
        return ParamMask(**{n: True for n in names})

    def enabled(self) -> list[str]:
        return [b for b in BLOCKS if getattr(self, b)]


@dataclass
class FitState:
    """All optimizable parameters as a structured bundle."""

    theta: torch.Tensor
    beta: torch.Tensor
    scale: torch.Tensor
    rot: torch.Tensor
    trans: torch.Tensor
    colors: torch.Tensor
    lighting: torch.Tensor

    def clone(self) -> "FitState":
        return FitState(**{b: getattr(self, b).detach().clone() for b in BLOCKS})

    def flat(self) -> torch.Tensor:
        return torch.cat([getattr(self, b).detach().reshape(-1) for b in BLOCKS])

    def with_flat(self, vec: torch.Tensor) -> "FitState":
        out, i = {}, 0
        for b in BLOCKS:
            n = BLOCK_SIZES[b]
            out[b] = vec[i:i + n].reshape(getattr(self, b).shape).clone()
            i += n
        return FitState(**out)

    def hand_params(self) -> HandParams:
        return HandParams(theta=self.theta, beta=self.beta, scale=self.scale.reshape(()),
                          rot=self.rot, trans=self.trans)

    def appearance(self) -> Appearance:
        return Appearance(colors=self.colors, lighting=self.lighting)


def default_init(trans_z: float = 0.6) -> FitState:
    """Mean pose at typical dataset depth with a uniform skin tone."""
    colors = torch.empty(778, 3, dtype=torch.float64)
    colors[:] = torch.tensor([0.7, 0.55, 0.45], dtype=torch.float64)
    lighting = torch.tensor([0.8, 1, 1, 1, 0.8, 1, 1, 1, 0, 0, -1], dtype=torch.float64)
    p = HandParams.zeros(trans_z=trans_z)
    return FitState(theta=p.theta, beta=p.beta, scale=p.scale.reshape(1),
                    rot=p.rot, trans=p.trans, colors=colors, lighting=lighting)


def _block_slices() -> dict[str, slice]:
    out, i = {}, 0
    for b in BLOCKS:
        out[b] = slice(i, i + BLOCK_SIZES[b])
        i += BLOCK_SIZES[b]
    return out


BLOCK_SLICES = _block_slices()


def gradient(objective, params: FitState, mask: ParamMask,
             return_breakdown: bool = False, term: str = "total"):
    """Reverse-mode gradient of objective(params).<term>, flattened.

    Disabled blocks contribute exactly-zero entries. The objective must
    return an EnergyBreakdown; a non-finite term raises
    NumericalEnergyError naming it.
    """
    work = params.clone()
    leaves = []
    for b in mask.enabled():
        t = getattr(work, b)
        t.requires_grad_(True)
        leaves.append(t)
    bd = objective(work)
    bd.assert_finite()
    value = getattr(bd, term)
    flat = torch.zeros(N_PARAMS, dtype=torch.float64)
    if value.requires_grad:  # a constant objective has an all-zero gradient
        grads = torch.autograd.grad(value, leaves, allow_unused=True)
        for b, g in zip(mask.enabled(), grads):
            if g is not None:
                flat[BLOCK_SLICES[b]] = g.reshape(-1)
    if return_breakdown:
        return flat, bd
    return flat


def check_gradient(objective, params: FitState, mask: ParamMask, eps: float = 1e-6,
                   max_coords_per_block: int = 8, seed: int = 0, term: str = "total",
                   stable_filter=None) -> dict[str, float]:
    """Max relative error of the analytic gradient vs central differences.

    Per enabled block, compares up to max_coords_per_block coordinates
    (all of them for small blocks) with
    |g_a - g_n| / max(1e-8, |g_a| + |g_n|). ``term`` selects which
    breakdown entry to differentiate. ``stable_filter(params_plus,
    params_minus) -> bool`` can reject perturbations (e.g. ones that
    change rasterization coverage); rejected coordinates are skipped.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    analytic = gradient(objective, params, mask, term=term)
    base = params.flat()
    gen = torch.Generator().manual_seed(seed)
    result = {}
    for b in mask.enabled():
        sl = BLOCK_SLICES[b]
        coords = list(range(sl.start, sl.stop))
        if len(coords) > max_coords_per_block:
            pick = torch.randperm(len(coords), generator=gen)[:max_coords_per_block]
            coords = [coords[int(i)] for i in pick]
        worst = 0.0
        for c in coords:
            vec = base.clone()
            vec[c] = base[c] + eps
            plus_state = params.with_flat(vec)
            vec[c] = base[c] - eps
            minus_state = params.with_flat(vec)
            if stable_filter is not None and not stable_filter(plus_state, minus_state):
                continue
            f_plus = float(getattr(objective(plus_state), term))
            f_minus = float(getattr(objective(minus_state), term))
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ga = float(analytic[c])
            rel = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
            worst = max(worst, rel)
        result[b] = worst
    return result


@dataclass
class AdamState:
    """Bias-corrected Adam over the enabled coordinates."""

    lr: float
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(n: int, lr: float, **kw) -> "AdamState":
        return AdamState(lr=lr, m=torch.zeros(n, dtype=torch.float64),
                         v=torch.zeros(n, dtype=torch.float64), **kw)


def adam_step(state: AdamState, params: torch.Tensor, grad: torch.Tensor):
    """One Adam update; returns (new params, new state)."""
    if params.shape != grad.shape:
        raise ValueError("params/grad shape mismatch")
    if not bool(torch.isfinite(grad).all()):
        raise ValueError("non-finite gradient")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (torch.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


@dataclass
class StageSpec:
    name: str
    iterations: int
    lr: float
    blocks: tuple
    photo: bool = False
    lr_end: float | None = None   # geometric decay target; None = constant lr

    def lr_at(self, it: int) -> float:
        if self.lr_end is None or self.iterations <= 1:
            return self.lr
        q = (self.lr_end / self.lr) ** (1.0 / (self.iterations - 1))
        return self.lr * q ** it


# Canonical global-rotation starts; 2D keypoints leave palm/back flips and
# quarter turns as separate basins, so the probe phase explores them briefly.
_ROT_PROBES = [
    (0.0, 0.0, 0.0),
    (torch.pi, 0.0, 0.0), (0.0, torch.pi, 0.0), (0.0, 0.0, torch.pi),
    (torch.pi / 2, 0.0, 0.0), (-torch.pi / 2, 0.0, 0.0),
    (0.0, torch.pi / 2, 0.0), (0.0, -torch.pi / 2, 0.0),
]


@dataclass
class ProbeSpec:
    """Multi-start over global rotations before the main schedule.

    Each canonical rotation start runs the short ``stages`` mini-schedule
    (keypoint terms only, no rendering); the best ``keep`` candidates by
    final energy continue through the full schedule and the best final
    fit wins. Deterministic: ties keep the lower probe index.
    """

    rotations: tuple = tuple(_ROT_PROBES)
    stages: list = None
    keep: int = 1

    def __post_init__(self):
        if self.stages is None:
            self.stages = [
                StageSpec("probe_rigid", 40, 0.05, ("scale", "rot", "trans")),
                StageSpec("probe_geo", 60, 0.02,
                          ("scale", "rot", "trans", "theta", "beta")),
            ]
        if self.keep < 1:
            raise ValueError("keep must be >= 1")


@dataclass
class FitSchedule:
    stages: list
    probes: ProbeSpec | None = None
    strict_trace: bool = True  # evaluate photometric terms in every stage when an image exists

    @staticmethod
    def default() -> "FitSchedule":
        return FitSchedule(stages=[
            StageSpec("stage_a", 200, 0.05, ("scale", "rot", "trans"), photo=False,
                      lr_end=0.002),
            StageSpec("stage_b", 300, 0.01, ("scale", "rot", "trans", "theta", "beta"),
                      photo=False, lr_end=0.0002),
            StageSpec("stage_c", 200, 0.01,
                      ("scale", "rot", "trans", "theta", "beta", "colors", "lighting"),
                      photo=True, lr_end=0.001),
        ], probes=ProbeSpec())


@dataclass
class FitReport:
    trace: list                 # one dict of term values per iteration
    params: HandParams
    appearance: Appearance
    seconds: float
    converged: bool
    restarts: int = 0
    seed: int = 0

    @property
    def final_total(self) -> float:
        return self.trace[-1]["total"] if self.trace else float("nan")

    @property
    def initial_total(self) -> float:
        return self.trace[0]["total"] if self.trace else float("nan")


def _evaluate(state: FitState, *, model, K, weights, prior, detected, estimated,
              image, gt_joints3d, con_sum, with_photo, trace_photo,
              render_size) -> EnergyBreakdown:
    geometry = forward_geometry(state.hand_params(), model)
    projected = project(geometry.joints21, K)
    render_out = None
    if image is not None and (with_photo or trace_photo):
        if with_photo:
            render_out = render(geometry, state.appearance(), model.faces, K, render_size)
        else:
            with torch.no_grad():
                render_out = render(geometry, state.appearance(), model.faces, K, render_size)
    return e_total(weights=weights, detected=detected, projected=projected,
                   estimated=estimated, image=image, render_out=render_out,
                   theta=state.theta, beta=state.beta, colors=state.colors,
                   geometry=geometry, model=model, prior=prior,
                   gt_joints3d=gt_joints3d, con_sum=con_sum)


def fit(image: torch.Tensor | None, detected: Keypoints2D, K: Intrinsics,
        model: HandModel, weights: Weights | None = None,
        schedule: FitSchedule | None = None, *,
        init: FitState | None = None, prior: SkeletonPrior | None = None,
        estimated: torch.Tensor | None = None,
        gt_joints3d: torch.Tensor | None = None,
        render_size: tuple[int, int] | None = None,
        normalize_confidence: bool = False,
        seed: int = 0) -> FitReport:
    """Staged Adam minimization of the total energy for one image.

    Deterministic given identical inputs, config, and seed. A degenerate
    projection restarts the stage from the last feasible iterate with
    halved learning rate, at most 3 times, then aborts with diagnostics.
    """
    weights = weights if weights is not None else Weights()
    schedule = schedule if schedule is not None else FitSchedule.default()
    prior = prior if prior is not None else default_skeleton_prior()
    state = (init if init is not None else default_init()).clone()
    torch.manual_seed(seed)

    con_sum = detected.con_sum / 21.0 if normalize_confidence else detected.con_sum
    t0 = time.perf_counter()
    trace: list[dict] = []
    total_restarts = 0

    def run_stage(start: FitState, stage: StageSpec, iterations: int, name: str,
                  with_photo: bool, trace_photo: bool, allow_restart: bool):
        nonlocal total_restarts
        mask = ParamMask.of(*stage.blocks)
        idx = torch.cat([torch.arange(BLOCK_SLICES[b].start, BLOCK_SLICES[b].stop)
                         for b in mask.enabled()])
        objective = lambda s: _evaluate(
            s, model=model, K=K, weights=weights, prior=prior,
            detected=detected, estimated=estimated, image=image,
            gt_joints3d=gt_joints3d, con_sum=con_sum,
            with_photo=with_photo, trace_photo=trace_photo, render_size=render_size)
        cur = start
        lr_scale = 1.0
        restarts = 0
        while True:
            last_good = cur.clone()
            adam = AdamState.init(idx.numel(), stage.lr)
            rows: list[dict] = []
            try:
                for it in range(iterations):
                    grad, bd = gradient(objective, cur, mask, return_breakdown=True)
                    row = bd.as_floats()
                    row.update(stage=name, iteration=it, lr=stage.lr_at(it) * lr_scale)
                    rows.append(row)
                    last_good = cur.clone()
                    adam = replace(adam, lr=stage.lr_at(it) * lr_scale)
                    flat = cur.flat()
                    new_sub, adam = adam_step(adam, flat[idx], grad[idx])
                    flat[idx] = new_sub
                    cur = cur.with_flat(flat)
                return cur, rows
            except DegenerateDepthError as err:
                restarts += 1
                if not allow_restart:
                    raise
                total_restarts += 1
                cur = last_good
                lr_scale *= 0.5
                if restarts > 3:
                    raise FitAbortError(
                        f"{name} aborted after {restarts - 1} restarts: {err}") from err

    candidates = [state]
    if schedule.probes is not None and len(schedule.probes.rotations) > 1:
        scored = []
        for k, probe in enumerate(schedule.probes.rotations):
            cur = state.clone()
            cur.rot = torch.tensor(probe, dtype=torch.float64)
            rows_k: list[dict] = []
            try:
                for pstage in schedule.probes.stages:
                    cur, rows = run_stage(cur, pstage, pstage.iterations,
                                          f"probe{k}:{pstage.name}", with_photo=False,
                                          trace_photo=False, allow_restart=False)
                    rows_k.extend(rows)
            except DegenerateDepthError:
                continue
            trace.extend(rows_k)
            scored.append((rows_k[-1]["total"], k, cur))
        scored.sort(key=lambda t: (t[0], t[1]))
        if scored:
            candidates = [s for _, _, s in scored[:schedule.probes.keep]]

    finals = []
    for ci, cand in enumerate(candidates):
        cur = cand
        rows_c: list[dict] = []
        prefix = f"cand{ci}:" if len(candidates) > 1 else ""
        for stage in schedule.stages:
            cur, rows = run_stage(cur, stage, stage.iterations, prefix + stage.name,
                                  with_photo=stage.photo,
                                  trace_photo=schedule.strict_trace and image is not None,
                                  allow_restart=True)
            rows_c.extend(rows)
        trace.extend(rows_c)
        finals.append((rows_c[-1]["total"], ci, cur))
    finals.sort(key=lambda t: (t[0], t[1]))
    state = finals[0][2]

    seconds = time.perf_counter() - t0
    converged = bool(trace) and trace[-1]["total"] <= trace[0]["total"] + 1e-12
    return FitReport(trace=trace, params=state.hand_params(),
                     appearance=state.appearance(), seconds=seconds,
                     converged=converged, restarts=total_restarts, seed=seed)
