"""Declarative scene configuration: one JSON file drives the whole pipeline.

Validation is total: every section is checked and every problem collected
before anything runs, so an invalid config never produces partial output.
Sections map onto the library types they configure (material presets, grid,
loads, colliders, camera rig, training schedule, propagation constants).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .gaussians import Camera, azimuth_camera
from .mpm.constitutive import ConstitutiveModel, make_preset, preset_names
from .mpm.solver import CFL_DEFAULT, Collider, ExternalLoad, MpmGrid, Region
from .refine import TrainSchedule


class ConfigError(ValueError):
    """One or more validation problems; the message lists all of them."""


@dataclass
class CameraRig:
    """Turntable rig: a render camera plus four supervision azimuths."""

    radius: float = 3.0
    target: tuple = (0.0, 0.0, 0.0)
    fx: float = 100.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.fx <= 0.0:
            raise ValueError(f"fx must be positive, got {self.fx}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        self.target = tuple(float(t) for t in np.asarray(self.target).reshape(3))

    def render_camera(self) -> Camera:
        return azimuth_camera(0, radius=self.radius, target=self.target,
                              fx=self.fx, width=self.width, height=self.height)

    def supervision_cameras(self) -> list:
        return [azimuth_camera(i, radius=self.radius, target=self.target,
                               fx=self.fx, width=self.width, height=self.height)
                for i in range(4)]


@dataclass
class SimulationConfig:
    frames: int = 24
    fps: float = 24.0
    cfl: float = CFL_DEFAULT
    transfer: str = "apic"
    covariance_mode: str = "incremental"
    dump_particles: bool = False

    def __post_init__(self):
        problems = []
        if self.frames < 1:
            problems.append(f"frames must be >= 1, got {self.frames}")
        if self.fps <= 0.0:
            problems.append(f"fps must be positive, got {self.fps}")
        if not 0.0 < self.cfl <= 1.0:
            problems.append(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.transfer not in ("apic", "pic"):
            problems.append(f"transfer must be apic or pic, got {self.transfer!r}")
        if self.covariance_mode not in ("incremental", "from_deformation"):
            problems.append("covariance_mode must be incremental or "
                            f"from_deformation, got {self.covariance_mode!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def frame_dt(self) -> float:
        return 1.0 / self.fps


@dataclass
class PropagationConfig:
    keyframe_interval: int = 5
    tau_f: float = 0.8
    tau_a: float = 0.8
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.keyframe_interval < 1:
            problems.append(f"keyframe_interval must be >= 1, "
                            f"got {self.keyframe_interval}")
        if not 0.0 < self.tau_f < 1.0:
            problems.append(f"tau_f must be in (0, 1), got {self.tau_f}")
        if not 0.0 < self.tau_a < 1.0:
            problems.append(f"tau_a must be in (0, 1), got {self.tau_a}")
        if self.seed < 0:
            problems.append(f"seed must be a nonnegative integer, got {self.seed}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class BlendConfig:
    """Background for compositing: an image path or a constant color."""

    background: object = (0.0, 0.0, 0.0)   # path string or (r, g, b)
    frames_dir: Optional[str] = None       # default: <output>/frames

    def __post_init__(self):
        if isinstance(self.background, str):
            return
        color = np.asarray(self.background, dtype=np.float64).reshape(-1)
        if color.shape != (3,):
            raise ValueError("background must be an image path or an "
                             "[r, g, b] color")
        if color.min() < 0.0 or color.max() > 1.0:
            raise ValueError("background color channels must lie in [0, 1]")
        self.background = tuple(float(c) for c in color)


@dataclass
class SceneConfig:
    splats: Path
    output: Path
    material: ConstitutiveModel = field(default_factory=ConstitutiveModel)
    loads: list = field(default_factory=list)
    grid: MpmGrid = field(default_factory=lambda: MpmGrid(
        origin=np.array([-1.0, -1.0, -1.0]), spacing=0.05, dims=(41, 41, 41)))
    colliders: list = field(default_factory=list)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    cameras: CameraRig = field(default_factory=CameraRig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    views: Optional[Path] = None
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)


def _reject_unknown(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) {', '.join(unknown)}; "
                         f"allowed: {', '.join(sorted(allowed))}")
    del where


def _build_material(section: dict) -> ConstitutiveModel:
    allowed = {"preset"} | {f.name for f in fields(ConstitutiveModel)}
    _reject_unknown(section, allowed, "material")
    overrides = {k: v for k, v in section.items() if k != "preset"}
    preset = section.get("preset")
    if preset is not None:
        return make_preset(preset, **overrides)
    if not overrides:
        raise ValueError(f"material needs a preset ({', '.join(preset_names())}) "
                         "or explicit parameters")
    return ConstitutiveModel(**overrides)


def _build_region(section: dict) -> Region:
    _reject_unknown(section, ("kind", "center", "radius", "lo", "hi"), "region")
    return Region(**section)


def _build_load(section: dict) -> ExternalLoad:
    _reject_unknown(section, ("kind", "vector", "center", "region", "window"),
                    "load")
    kwargs = dict(section)
    if "region" in kwargs:
        kwargs["region"] = _build_region(kwargs["region"])
    if "window" in kwargs:
        t0, t1 = kwargs["window"]
        kwargs["window"] = (float(t0), np.inf if t1 is None else float(t1))
    return ExternalLoad(**kwargs)


def _build_collider(section: dict) -> Collider:
    _reject_unknown(section, ("kind", "mode", "friction", "point", "normal",
                              "lo", "hi"), "collider")
    return Collider(**section)


def _build_grid(section: dict) -> MpmGrid:
    _reject_unknown(section, ("origin", "spacing", "dims"), "grid")
    missing = [k for k in ("origin", "spacing", "dims") if k not in section]
    if missing:
        raise ValueError(f"missing key(s) {', '.join(missing)}")
    return MpmGrid(origin=section["origin"], spacing=section["spacing"],
                   dims=section["dims"])


def _build_dataclass(cls, section: dict):
    _reject_unknown(section, tuple(f.name for f in fields(cls)), cls.__name__)
    return cls(**section)


_TOP_LEVEL = ("splats", "output", "material", "loads", "grid", "colliders",
              "simulation", "cameras", "optimization", "views", "propagation",
              "blend")


def parse_config(raw: dict, *, base_dir: Path = Path(".")) -> SceneConfig:
    """Build a SceneConfig from parsed JSON, aggregating every problem.

    Relative paths resolve against ``base_dir`` (the config file's parent).
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    errors = []
    unknown = sorted(set(raw) - set(_TOP_LEVEL))
    if unknown:
        errors.append(f"unknown top-level key(s): {', '.join(unknown)}; "
                      f"allowed: {', '.join(_TOP_LEVEL)}")

    def build(where, builder, *args):
        try:
            return builder(*args)
        except (ValueError, TypeError) as err:
            errors.append(f"{where}: {err}")
            return None

    if "splats" not in raw:
        errors.append("splats: a splat PLY path is required")
    if "output" not in raw:
        errors.append("output: an output directory is required")
    splats = base_dir / str(raw.get("splats", ""))
    output = base_dir / str(raw.get("output", ""))
    if "splats" in raw and not splats.is_file():
        errors.append(f"splats: {splats} does not exist")

    material = build("material", _build_material, raw.get("material",
                                                          {"preset": "elastic"}))
    loads = []
    for i, entry in enumerate(raw.get("loads", [])):
        load = build(f"loads[{i}]", _build_load, entry)
        if load is not None:
            loads.append(load)
    grid = build("grid", _build_grid, raw["grid"]) if "grid" in raw else \
        SceneConfig.__dataclass_fields__["grid"].default_factory()
    colliders = []
    for i, entry in enumerate(raw.get("colliders", [])):
        collider = build(f"colliders[{i}]", _build_collider, entry)
        if collider is not None:
            colliders.append(collider)
    simulation = build("simulation", _build_dataclass, SimulationConfig,
                       raw.get("simulation", {}))
    cameras = build("cameras", _build_dataclass, CameraRig,
                    raw.get("cameras", {}))
    schedule = build("optimization", _build_dataclass, TrainSchedule,
                     raw.get("optimization", {}))
    propagation = build("propagation", _build_dataclass, PropagationConfig,
                        raw.get("propagation", {}))
    blend = build("blend", _build_dataclass, BlendConfig, raw.get("blend", {}))

    views = None
    if "views" in raw:
        views = base_dir / str(raw["views"])
        if not views.is_dir():
            errors.append(f"views: {views} is not a directory")
    if blend is not None and isinstance(blend.background, str):
        bg = base_dir / blend.background
        if not bg.is_file():
            errors.append(f"blend.background: {bg} does not exist")
        else:
            blend.background = str(bg)
    if blend is not None and blend.frames_dir is not None:
        frames_dir = base_dir / blend.frames_dir
        if not frames_dir.is_dir():
            errors.append(f"blend.frames_dir: {frames_dir} is not a directory")
        else:
            blend.frames_dir = str(frames_dir)

    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return SceneConfig(splats=splats, output=output, material=material,
                       loads=loads, grid=grid, colliders=colliders,
                       simulation=simulation, cameras=cameras,
                       schedule=schedule, views=views, propagation=propagation,
                       blend=blend)


def load_config(path) -> SceneConfig:
    """Read and validate a scene config JSON file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(raw, base_dir=path.parent)
