"""TOML fit configuration: weights, schedule, init, paths.

Parsing is strict: the file must carry ``schema = 1`` and any unknown key
fails with a message naming it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .energies import Weights
from .exceptions import ConfigError
from .fitting import BLOCKS, FitSchedule, FitState, ProbeSpec, StageSpec, default_init

_KNOWN = {
    "schema": None,
    "paths": {"model", "skeleton_prior"},
    "weights": {"w_3d", "w_2d", "w_con", "w_geo", "w_photo", "w_regu", "w_ori",
                "w_ssim", "w_c", "w_s", "w_j", "w_3dj"},
    "render": {"size"},
    "fit": {"seed", "normalize_confidence", "strict_trace"},
    "init": {"trans", "scale", "colors", "ambient", "ambient_color",
             "directional", "directional_color", "direction"},
    "probes": {"enabled", "keep", "rigid_iterations", "geo_iterations"},
    "schedule": None,  # validated per stage below
}
_STAGE_KEYS = {"iterations", "lr", "lr_end", "blocks", "photo"}


@dataclass
class FitConfig:
    weights: Weights = field(default_factory=Weights)
    schedule: FitSchedule = field(default_factory=FitSchedule.default)
    init: FitState = field(default_factory=default_init)
    render_size: int = 224
    seed: int = 0
    normalize_confidence: bool = False
    model_path: str | None = None
    skeleton_prior_path: str | None = None
    source_sha256: str | None = None


def _check_keys(doc: dict, path: Path) -> None:
    for section, value in doc.items():
        if section not in _KNOWN:
            raise ConfigError(f"{path}: unknown section or key '{section}'")
        allowed = _KNOWN[section]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: '{section}' must be a table")
        for key in value:
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key '{section}.{key}'")
    for stage_name, stage in doc.get("schedule", {}).items():
        if not isinstance(stage, dict):
            raise ConfigError(f"{path}: 'schedule.{stage_name}' must be a table")
        for key in stage:
            if key not in _STAGE_KEYS:
                raise ConfigError(f"{path}: unknown key 'schedule.{stage_name}.{key}'")


def _build_init(section: dict, path: Path) -> FitState:
    state = default_init()
    if "trans" in section:
        state.trans = torch.tensor([float(v) for v in section["trans"]], dtype=torch.float64)
        if state.trans.shape != (3,):
            raise ConfigError(f"{path}: init.trans needs 3 values")
    if "scale" in section:
        state.scale = torch.tensor([float(section["scale"])], dtype=torch.float64)
    if "colors" in section:
        rgb = [float(v) for v in section["colors"]]
        if len(rgb) != 3:
            raise ConfigError(f"{path}: init.colors needs 3 values")
        state.colors = torch.empty(778, 3, dtype=torch.float64)
        state.colors[:] = torch.tensor(rgb, dtype=torch.float64)
    lighting = state.lighting.clone()
    for key, sl in [("ambient", slice(0, 1)), ("ambient_color", slice(1, 4)),
                    ("directional", slice(4, 5)), ("directional_color", slice(5, 8)),
                    ("direction", slice(8, 11))]:
        if key in section:
            vals = section[key] if isinstance(section[key], list) else [section[key]]
            if len(vals) != sl.stop - sl.start:
                raise ConfigError(f"{path}: init.{key} needs {sl.stop - sl.start} value(s)")
            lighting[sl] = torch.tensor([float(v) for v in vals], dtype=torch.float64)
    state.lighting = lighting
    return state


def _build_stage(name: str, section: dict, default: StageSpec, path: Path) -> StageSpec:
    try:
        blocks = tuple(section.get("blocks", default.blocks))
        unknown = set(blocks) - set(BLOCKS)
        if unknown:
            raise ConfigError(f"{path}: schedule.{name}.blocks has unknown blocks {sorted(unknown)}")
        return StageSpec(
            name=name,
            iterations=int(section.get("iterations", default.iterations)),
            lr=float(section.get("lr", default.lr)),
            lr_end=(float(section["lr_end"]) if "lr_end" in section else default.lr_end),
            blocks=blocks,
            photo=bool(section.get("photo", default.photo)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: schedule.{name}: {e}") from e


def load_config(path: str | Path) -> FitConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    try:
        doc = tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    if doc.get("schema") != 1:
        raise ConfigError(f"{path}: missing or unsupported 'schema' (need schema = 1)")
    _check_keys(doc, path)

    try:
        weights = Weights(**doc.get("weights", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: weights: {e}") from e

    defaults = {s.name: s for s in FitSchedule.default().stages}
    sched_doc = doc.get("schedule", {})
    if sched_doc:
        stages = []
        for name, section in sched_doc.items():
            base = defaults.get(name, StageSpec(name, 100, 0.01, ("theta",)))
            stages.append(_build_stage(name, section, base, path))
    else:
        stages = FitSchedule.default().stages

    probes_doc = doc.get("probes", {})
    probes = None
    if probes_doc.get("enabled", True):
        probes = ProbeSpec(keep=int(probes_doc.get("keep", 1)))
        if "rigid_iterations" in probes_doc:
            probes.stages[0].iterations = int(probes_doc["rigid_iterations"])
        if "geo_iterations" in probes_doc:
            probes.stages[1].iterations = int(probes_doc["geo_iterations"])

    fit_doc = doc.get("fit", {})
    schedule = FitSchedule(stages=stages, probes=probes,
                           strict_trace=bool(fit_doc.get("strict_trace", True)))
    paths = doc.get("paths", {})
    return FitConfig(
        weights=weights,
        schedule=schedule,
        init=_build_init(doc.get("init", {}), path),
        render_size=int(doc.get("render", {}).get("size", 224)),
        seed=int(fit_doc.get("seed", 0)),
        normalize_confidence=bool(fit_doc.get("normalize_confidence", False)),
        model_path=paths.get("model"),
        skeleton_prior_path=paths.get("skeleton_prior"),
        source_sha256=hashlib.sha256(raw).hexdigest(),
    )
