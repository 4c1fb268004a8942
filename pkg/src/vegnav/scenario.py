"""Scenario configuration: a JSON key-value schema that fully describes a
trial world plus all perception/planner parameters.

Top-level keys:

    name            scenario identifier (string)
    grid            {"width": cells, "height": cells, "resolution": m/cell}
    blobs           list of vegetation blobs, each:
                        {"class": "sparse_grass"|"dense_grass"|"bush"|"tree"|"unknown",
                         "shape": "rect"|"polygon",
                         "rect": [x0, y0, x1, y1]         (rect shape, meters)
                         "points": [[x, y], ...]          (polygon shape)
                         "height": m, "drag": 0..1, "density": 0..1}
    start           [x, y, theta], goal [x, y]            (meters, odom frame)
    seed            integer used for density fills
    duration        max simulated trial seconds
    goal_tolerance  success radius around the goal (m)
    robot_radius    footprint disc radius (m)
    snag_rate       per-second snag probability in dense grass
    force_snag_time optional scripted snag time (seconds) or null
    camera          {"fov_deg", "r_near", "r_far", "image_left_is_world_left"}
    noise           {"d_true", "d_false", "sigma", "p_mis"}
    alpha           confidence decay, confidence = exp(-alpha * distance)
    no_match_distance  rows whose minimum distance reaches this level match
                    no training class; their quadrants keep raw geometry
                    costs instead of being cleared
    classification_hold  seconds a quadrant that stops matching keeps its
                    previous matched classification (temporal smoothing, so
                    leaving vegetation does not strand the robot inside the
                    obstacle inflation halo)
    weights         {"w_sparse", "w_dense", "w_nonpliable", "b_nonpliable"}
    scan            {"z_low", "z_mid", "z_high", "n_beams", "max_range"}
    costmap         {"size", "resolution", "inflation_radius"}
    planner         see PlannerParams

Files round-trip losslessly: floats are serialized with Python's shortest
repr, which json restores bit-exactly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .costmap import ClearingWeights, CostmapConfig
from .perception import CameraModel, NoiseModel
from .planner import PlannerParams
from .world import ConfigurationError


@dataclass(frozen=True)
class VegBlob:
    veg_class: str
    shape: str = "rect"
    rect: tuple = ()
    points: tuple = ()
    height: float = 0.0
    drag: float = 0.0
    density: float = 1.0

    def to_dict(self) -> dict:
        d = {"class": self.veg_class, "shape": self.shape, "height": self.height,
             "drag": self.drag, "density": self.density}
        if self.shape == "rect":
            d["rect"] = list(self.rect)
        else:
            d["points"] = [list(p) for p in self.points]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VegBlob":
        return cls(
            veg_class=d["class"],
            shape=d.get("shape", "rect"),
            rect=tuple(d.get("rect", ())),
            points=tuple(tuple(p) for p in d.get("points", ())),
            height=float(d.get("height", 0.0)),
            drag=float(d.get("drag", 0.0)),
            density=float(d.get("density", 1.0)),
        )


@dataclass(frozen=True)
class ScanConfig:
    z_low: float = 0.2
    z_mid: float = 0.7
    z_high: float = 1.2
    n_beams: int = 90
    max_range: float = 4.0

    @property
    def heights(self) -> tuple[float, float, float]:
        return (self.z_low, self.z_mid, self.z_high)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    grid_width: int
    grid_height: int
    resolution: float
    blobs: tuple[VegBlob, ...]
    start: tuple[float, float, float]
    goal: tuple[float, float]
    seed: int = 0
    duration: float = 120.0
    goal_tolerance: float = 0.3
    robot_radius: float = 0.3
    snag_rate: float = 0.0
    force_snag_time: float | None = None
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseModel = field(default_factory=NoiseModel)
    alpha: float = 2.0
    no_match_distance: float = 0.7
    classification_hold: float = 1.5
    weights: ClearingWeights = field(default_factory=ClearingWeights)
    scan: ScanConfig = field(default_factory=ScanConfig)
    costmap: CostmapConfig = field(default_factory=CostmapConfig)
    planner: PlannerParams = field(default_factory=PlannerParams)

    def validate(self) -> None:
        if self.grid_width <= 0 or self.grid_height <= 0 or self.resolution <= 0:
            raise ConfigurationError("grid dimensions and resolution must be positive")
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        ex = self.grid_width * self.resolution
        ey = self.grid_height * self.resolution
        sx, sy, _ = self.start
        gx, gy = self.goal
        if not (0 <= sx < ex and 0 <= sy < ey):
            raise ConfigurationError(f"start {self.start[:2]} outside the world")
        if not (0 <= gx < ex and 0 <= gy < ey):
            raise ConfigurationError(f"goal {self.goal} outside the world")
        if math.hypot(gx - sx, gy - sy) <= self.goal_tolerance:
            raise ConfigurationError("goal must lie outside the start tolerance radius")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.robot_radius <= 0:
            raise ConfigurationError("robot radius must be positive")

    def replace(self, **kw) -> "ScenarioSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "grid": {"width": self.grid_width, "height": self.grid_height,
                     "resolution": self.resolution},
            "blobs": [b.to_dict() for b in self.blobs],
            "start": list(self.start),
            "goal": list(self.goal),
            "seed": self.seed,
            "duration": self.duration,
            "goal_tolerance": self.goal_tolerance,
            "robot_radius": self.robot_radius,
            "snag_rate": self.snag_rate,
            "force_snag_time": self.force_snag_time,
            "camera": dataclasses.asdict(self.camera),
            "noise": dataclasses.asdict(self.noise),
            "alpha": self.alpha,
            "no_match_distance": self.no_match_distance,
            "classification_hold": self.classification_hold,
            "weights": dataclasses.asdict(self.weights),
            "scan": dataclasses.asdict(self.scan),
            "costmap": dataclasses.asdict(self.costmap),
            "planner": dataclasses.asdict(self.planner),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        try:
            grid = d["grid"]
            spec = cls(
                name=d["name"],
                grid_width=int(grid["width"]),
                grid_height=int(grid["height"]),
                resolution=float(grid["resolution"]),
                blobs=tuple(VegBlob.from_dict(b) for b in d.get("blobs", [])),
                start=tuple(d["start"]),
                goal=tuple(d["goal"]),
                seed=int(d.get("seed", 0)),
                duration=float(d.get("duration", 120.0)),
                goal_tolerance=float(d.get("goal_tolerance", 0.3)),
                robot_radius=float(d.get("robot_radius", 0.3)),
                snag_rate=float(d.get("snag_rate", 0.0)),
                force_snag_time=(None if d.get("force_snag_time") is None
                                 else float(d["force_snag_time"])),
                camera=CameraModel(**d.get("camera", {})),
                noise=NoiseModel(**d.get("noise", {})),
                alpha=float(d.get("alpha", 2.0)),
                no_match_distance=float(d.get("no_match_distance", 0.7)),
                classification_hold=float(d.get("classification_hold", 1.5)),
                weights=ClearingWeights(**d.get("weights", {})),
                scan=ScanConfig(**d.get("scan", {})),
                costmap=CostmapConfig(**d.get("costmap", {})),
                planner=PlannerParams(**d.get("planner", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed scenario: {exc}") from exc
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def canonical_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def save_scenario(spec: ScenarioSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_json())


def load_scenario(name_or_path: str | Path) -> ScenarioSpec:
    """Load a scenario from a JSON file path or a bundled scenario name."""
    p = Path(name_or_path)
    if p.exists():
        return ScenarioSpec.from_dict(json.loads(p.read_text()))
    name = str(name_or_path)
    if not name.endswith(".json"):
        name += ".json"
    ref = resources.files("vegnav").joinpath("scenarios", name)
    if not ref.is_file():
        raise ConfigurationError(f"no scenario file or bundled scenario named {name_or_path!r}")
    return ScenarioSpec.from_dict(json.loads(ref.read_text()))


def bundled_scenarios() -> list[str]:
    base = resources.files("vegnav").joinpath("scenarios")
    return sorted(f.name[:-5] for f in base.iterdir() if f.name.endswith(".json"))
