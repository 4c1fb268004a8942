"""2D vegetation world: grid model, robot kinematics, and a multi-height
lidar raycaster.

The world is a uniform cell grid in a fixed global frame ("odom"), with the
grid corner at the origin. Each cell carries a vegetation class, a plant
height in meters, and a lumped drag coefficient. Grass is pliable: the robot
can push through it, slowed by drag and with a chance of getting its legs
snagged in dense patches. Bushes, trees and unknown obstacles are solid and
produce collision events on contact.

All randomness is drawn from generators passed in by the caller, so a world
plus a seed plus a command sequence replays bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .scenario import ScenarioSpec

TWO_PI = 2.0 * math.pi

# Seconds of sustained straight-line holonomic pulling needed to free a snag.
SNAG_ESCAPE_TIME = 1.0


class ConfigurationError(ValueError):
    """Raised for malformed world or scenario configuration."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = a % TWO_PI
    return r if r <= math.pi else r - TWO_PI


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle."""
    r = np.mod(a, TWO_PI)
    return np.where(r > math.pi, r - TWO_PI, r)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose in the odom frame; theta is kept in (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, x: float, y: float) -> float:
        return math.hypot(self.x - x, self.y - y)


@dataclass(frozen=True)
class FrameTransform:
    """Rigid 2D transform: p' = R(rotation) @ p + (tx, ty)."""

    tx: float
    ty: float
    rotation: float = 0.0

    def apply(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return (c * x - s * y + self.tx, s * x + c * y + self.ty)

    def inverse(self) -> "FrameTransform":
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return FrameTransform(
            tx=-(c * self.tx + s * self.ty),
            ty=-(-s * self.tx + c * self.ty),
            rotation=-self.rotation,
        )

    def compose(self, other: "FrameTransform") -> "FrameTransform":
        """Transform equivalent to applying `other` first, then `self`."""
        tx, ty = self.apply(other.tx, other.ty)
        return FrameTransform(tx=tx, ty=ty, rotation=self.rotation + other.rotation)


class VegClass(IntEnum):
    """Cell contents. Values 1-4 double as classifier class indices."""

    FREE = 0
    SPARSE_GRASS = 1
    DENSE_GRASS = 2
    BUSH = 3
    TREE = 4
    UNKNOWN = 5

    @property
    def pliable(self) -> bool:
        return self in (VegClass.SPARSE_GRASS, VegClass.DENSE_GRASS)

    @property
    def solid(self) -> bool:
        return self in (VegClass.BUSH, VegClass.TREE, VegClass.UNKNOWN)


CLASS_NAMES = {
    VegClass.FREE: "free",
    VegClass.SPARSE_GRASS: "sparse_grass",
    VegClass.DENSE_GRASS: "dense_grass",
    VegClass.BUSH: "bush",
    VegClass.TREE: "tree",
    VegClass.UNKNOWN: "unknown",
}
NAME_TO_CLASS = {v: k for k, v in CLASS_NAMES.items()}


def validate_plant(veg: VegClass, height: float, drag: float) -> None:
    """Check a (class, height, drag) triple against the vegetation model.

    Grass must be taller than 0.3 m, bushes between 0.1 and 0.5 m, trees
    taller than 2 m. Only pliable classes may carry drag.
    """
    if veg == VegClass.FREE:
        if height != 0.0 or drag != 0.0:
            raise ConfigurationError("free cells must have zero height and drag")
        return
    if not 0.0 <= drag <= 1.0:
        raise ConfigurationError(f"drag {drag} outside [0, 1]")
    if drag > 0.0 and not veg.pliable:
        raise ConfigurationError(f"{CLASS_NAMES[veg]} cells cannot have drag")
    if veg in (VegClass.SPARSE_GRASS, VegClass.DENSE_GRASS) and height <= 0.3:
        raise ConfigurationError(f"grass height must exceed 0.3 m, got {height}")
    if veg == VegClass.BUSH and not 0.1 <= height <= 0.5:
        raise ConfigurationError(f"bush height must lie in [0.1, 0.5] m, got {height}")
    if veg == VegClass.TREE and height <= 2.0:
        raise ConfigurationError(f"tree height must exceed 2 m, got {height}")
    if veg == VegClass.UNKNOWN and height <= 0.0:
        raise ConfigurationError(f"unknown-obstacle height must be positive, got {height}")


@dataclass
class WorldGrid:
    """Ground-truth vegetation map.

    `classes`, `heights` and `drag` are (height, width) arrays indexed
    [row, col]; cell (r, c) spans x in [c*res, (c+1)*res) and y in
    [r*res, (r+1)*res). `snag_rate` is the per-second probability of the
    robot snagging while its footprint overlaps dense grass.
    """

    width: int
    height: int
    resolution: float
    classes: np.ndarray
    heights: np.ndarray
    drag: np.ndarray
    snag_rate: float = 0.0
    _occ_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def extent_x(self) -> float:
        return self.width * self.resolution

    @property
    def extent_y(self) -> float:
        return self.height * self.resolution

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.extent_x and 0.0 <= y < self.extent_y

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        return (int(y / self.resolution), int(x / self.resolution))

    def occupancy(self, z: float) -> np.ndarray:
        """Boolean mask of cells whose plant height reaches z. Cached."""
        key = round(z, 9)
        occ = self._occ_cache.get(key)
        if occ is None:
            occ = self.heights >= z
            self._occ_cache[key] = occ
        return occ

    def validate(self) -> None:
        it = np.nditer(self.classes, flags=["multi_index"])
        for c in it:
            r, col = it.multi_index
            validate_plant(VegClass(int(c)), float(self.heights[r, col]), float(self.drag[r, col]))


def empty_world(width: int, height: int, resolution: float, snag_rate: float = 0.0) -> WorldGrid:
    if width <= 0 or height <= 0 or resolution <= 0:
        raise ConfigurationError("world dimensions and resolution must be positive")
    shape = (height, width)
    return WorldGrid(
        width=width,
        height=height,
        resolution=resolution,
        classes=np.zeros(shape, dtype=np.int16),
        heights=np.zeros(shape, dtype=float),
        drag=np.zeros(shape, dtype=float),
        snag_rate=snag_rate,
    )


def _polygon_mask(cx: np.ndarray, cy: np.ndarray, points: list) -> np.ndarray:
    """Even-odd point-in-polygon test for arrays of query points."""
    inside = np.zeros(cx.shape, dtype=bool)
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        crosses = (cy < y0) != (cy < y1)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (cy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (cx < xi)
    return inside


def _blob_mask(world: WorldGrid, blob) -> np.ndarray:
    cols = (np.arange(world.width) + 0.5) * world.resolution
    rows = (np.arange(world.height) + 0.5) * world.resolution
    cx, cy = np.meshgrid(cols, rows)
    if blob.shape == "rect":
        x0, y0, x1, y1 = blob.rect
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError(f"degenerate rect {blob.rect}")
        return (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)
    if blob.shape == "polygon":
        if len(blob.points) < 3:
            raise ConfigurationError("polygon needs at least 3 points")
        return _polygon_mask(cx, cy, blob.points)
    raise ConfigurationError(f"unknown blob shape {blob.shape!r}")


def build_world(spec: "ScenarioSpec") -> WorldGrid:
    """Construct the ground-truth grid for a scenario.

    Blobs are rasterized in order (later blobs overwrite earlier ones) on
    cell centers. A blob with density < 1 keeps each covered cell with that
    probability, drawn from a stream seeded by (spec.seed, blob index), so
    construction is fully deterministic.
    """
    world = empty_world(spec.grid_width, spec.grid_height, spec.resolution, spec.snag_rate)
    for idx, blob in enumerate(spec.blobs):
        veg = NAME_TO_CLASS.get(blob.veg_class)
        if veg is None:
            raise ConfigurationError(f"unknown vegetation class {blob.veg_class!r}")
        if veg == VegClass.FREE:
            raise ConfigurationError("free blobs are not supported")
        validate_plant(veg, blob.height, blob.drag)
        if not 0.0 < blob.density <= 1.0:
            raise ConfigurationError(f"blob density {blob.density} outside (0, 1]")
        mask = _blob_mask(world, blob)
        if blob.density < 1.0:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFF, idx]))
            mask = mask & (rng.random(mask.shape) < blob.density)
        world.classes[mask] = int(veg)
        world.heights[mask] = blob.height
        world.drag[mask] = blob.drag
    return world


def cells_in_disc(
    n_rows: int, n_cols: int, resolution: float, cx: float, cy: float, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Grid cells whose area intersects the closed disc at (cx, cy).

    Uses exact point-to-rectangle distance with a tiny tolerance so that a
    disc exactly tangent to a cell edge still counts as touching it.
    """
    r0 = max(0, int(math.floor((cy - radius) / resolution)))
    r1 = min(n_rows - 1, int(math.floor((cy + radius) / resolution)))
    c0 = max(0, int(math.floor((cx - radius) / resolution)))
    c1 = min(n_cols - 1, int(math.floor((cx + radius) / resolution)))
    if r1 < r0 or c1 < c0:
        return (np.empty(0, dtype=int), np.empty(0, dtype=int))
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    xmin = cc * resolution
    ymin = rr * resolution
    dx = np.maximum(np.maximum(xmin - cx, cx - (xmin + resolution)), 0.0)
    dy = np.maximum(np.maximum(ymin - cy, cy - (ymin + resolution)), 0.0)
    hit = dx * dx + dy * dy <= radius * radius + 1e-12
    return (rr[hit], cc[hit])


@dataclass
class ScanLayer:
    """One planar lidar sweep at height z.

    `angles` are world-frame beam directions; `ranges` hold the distance to
    the first cell whose plant height reaches z, or `max_range` for misses.
    """

    z: float
    max_range: float
    origin: Pose2D
    angles: np.ndarray
    ranges: np.ndarray

    @property
    def hits(self) -> np.ndarray:
        return self.ranges < self.max_range


def raycast_scan(
    world: WorldGrid, pose: Pose2D, z: float, n_beams: int = 90, max_range: float = 4.0
) -> ScanLayer:
    """Cast n_beams rays at height z, evenly spread over 360 degrees.

    Rays march cell boundaries with an amortized grid traversal (all beams
    advance in lockstep); a beam terminates at the boundary where it enters
    the first cell with plant height >= z. Beams leaving the grid or
    exceeding max_range report max_range.
    """
    if z < 0:
        raise ValueError("scan height must be nonnegative")
    if n_beams < 8:
        raise ValueError("need at least 8 beams")
    if not world.in_bounds(pose.x, pose.y):
        raise ValueError(f"scan pose ({pose.x}, {pose.y}) outside world bounds")

    res = world.resolution
    occ = world.occupancy(z)
    angles = pose.theta + TWO_PI * np.arange(n_beams) / n_beams
    dirx = np.cos(angles)
    diry = np.sin(angles)

    ix = np.full(n_beams, int(pose.x / res), dtype=np.int64)
    iy = np.full(n_beams, int(pose.y / res), dtype=np.int64)
    ranges = np.full(n_beams, max_range, dtype=float)
    active = np.ones(n_beams, dtype=bool)

    # A beam starting inside an occluding cell reports zero range.
    start_hit = occ[iy, ix]
    ranges[start_hit] = 0.0
    active &= ~start_hit

    step_x = np.where(dirx > 0, 1, -1).astype(np.int64)
    step_y = np.where(diry > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta_x = np.where(dirx != 0.0, res / np.abs(dirx), np.inf)
        t_delta_y = np.where(diry != 0.0, res / np.abs(diry), np.inf)
        next_x = np.where(dirx > 0, (ix + 1) * res, ix * res)
        next_y = np.where(diry > 0, (iy + 1) * res, iy * res)
        t_max_x = np.where(dirx != 0.0, (next_x - pose.x) / dirx, np.inf)
        t_max_y = np.where(diry != 0.0, (next_y - pose.y) / diry, np.inf)

    max_steps = 2 * int(max_range / res) + 4
    for _ in range(max_steps):
        if not active.any():
            break
        go_x = active & (t_max_x <= t_max_y)
        go_y = active & ~go_x
        t_cross = np.where(go_x, t_max_x, t_max_y)

        # Beams whose next boundary is beyond range terminate as misses.
        out_of_range = active & (t_cross >= max_range)
        active &= ~out_of_range
        go_x &= active
        go_y &= active

        ix = ix + np.where(go_x, step_x, 0)
        iy = iy + np.where(go_y, step_y, 0)
        t_max_x = t_max_x + np.where(go_x, t_delta_x, 0.0)
        t_max_y = t_max_y + np.where(go_y, t_delta_y, 0.0)

        stepped = go_x | go_y
        exited = stepped & ((ix < 0) | (ix >= world.width) | (iy < 0) | (iy >= world.height))
        active &= ~exited
        stepped &= active
        if stepped.any():
            idx = np.nonzero(stepped)[0]
            hit = occ[iy[idx], ix[idx]]
            hit_idx = idx[hit]
            ranges[hit_idx] = t_cross[hit_idx]
            active[hit_idx] = False

    return ScanLayer(z=z, max_range=max_range, origin=pose, angles=angles, ranges=ranges)


@dataclass(frozen=True)
class VelocityCommand:
    """Either a unicycle (v, omega) command or an odom-frame holonomic
    (vx, vy) translation with no rotational component."""

    holonomic: bool = False
    v: float = 0.0
    omega: float = 0.0
    vx: float = 0.0
    vy: float = 0.0

    @classmethod
    def unicycle(cls, v: float, omega: float) -> "VelocityCommand":
        return cls(holonomic=False, v=v, omega=omega)

    @classmethod
    def translate(cls, vx: float, vy: float) -> "VelocityCommand":
        return cls(holonomic=True, vx=vx, vy=vy)

    @classmethod
    def stop(cls) -> "VelocityCommand":
        return cls()

    @property
    def is_zero(self) -> bool:
        if self.holonomic:
            return self.vx == 0.0 and self.vy == 0.0
        return self.v == 0.0 and self.omega == 0.0


@dataclass
class RobotState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0
    radius: float = 0.3
    snagged: bool = False
    escape_time: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("robot radius must be positive")


@dataclass(frozen=True)
class EventSet:
    collision: bool = False
    snag_started: bool = False
    snag_released: bool = False


def _footprint_cells(world: WorldGrid, x: float, y: float, radius: float):
    return cells_in_disc(world.height, world.width, world.resolution, x, y, radius)


def collision_check(world: WorldGrid, pose: Pose2D, radius: float) -> bool:
    """True iff any solid (bush/tree/unknown) cell touches the robot disc."""
    if not world.in_bounds(pose.x, pose.y):
        raise ValueError("pose outside world bounds")
    rows, cols = _footprint_cells(world, pose.x, pose.y, radius)
    if rows.size == 0:
        return False
    cls = world.classes[rows, cols]
    return bool(((cls == VegClass.BUSH) | (cls == VegClass.TREE) | (cls == VegClass.UNKNOWN)).any())


def _integrate_unicycle(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    if abs(omega) < 1e-12:
        return Pose2D(
            pose.x + v * dt * math.cos(pose.theta),
            pose.y + v * dt * math.sin(pose.theta),
            pose.theta,
        )
    r = v / omega
    th1 = pose.theta + omega * dt
    return Pose2D(
        pose.x + r * (math.sin(th1) - math.sin(pose.theta)),
        pose.y - r * (math.cos(th1) - math.cos(pose.theta)),
        th1,
    )


def step_dynamics(
    state: RobotState,
    cmd: VelocityCommand,
    world: WorldGrid,
    dt: float,
    rng: np.random.Generator,
    force_snag: bool = False,
) -> tuple[RobotState, EventSet]:
    """Advance the robot by one control period.

    The commanded velocity is attenuated by the summed drag of all cells
    under the footprint: v_real = cmd * max(0, 1 - sum(drag)). While the
    footprint overlaps dense grass the robot may snag (probability
    snag_rate * dt, or forced via `force_snag`); a snagged robot does not
    move at all until it has been pulled by a straight-line holonomic
    command for SNAG_ESCAPE_TIME cumulative consecutive seconds. The
    release takes effect on the following step.

    The position is clamped to the world interior; a collision event is
    emitted when the new footprint touches a solid cell.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rows, cols = _footprint_cells(world, state.pose.x, state.pose.y, state.radius)
    drag_sum = float(world.drag[rows, cols].sum()) if rows.size else 0.0
    atten = max(0.0, 1.0 - drag_sum)
    in_dense = rows.size > 0 and bool((world.classes[rows, cols] == VegClass.DENSE_GRASS).any())

    snagged = state.snagged
    escape = state.escape_time
    snag_started = False
    snag_released = False

    if not snagged and in_dense:
        if force_snag or (world.snag_rate > 0.0 and rng.random() < world.snag_rate * dt):
            snagged = True
            escape = 0.0
            snag_started = True

    if snagged:
        new_pose = state.pose
        new_v, new_omega = 0.0, 0.0
        if cmd.holonomic and not cmd.is_zero:
            escape += dt
            if escape >= SNAG_ESCAPE_TIME - 1e-9:
                snagged = False
                snag_released = True
        else:
            escape = 0.0
    else:
        escape = 0.0
        if cmd.holonomic:
            new_pose = Pose2D(
                state.pose.x + cmd.vx * atten * dt,
                state.pose.y + cmd.vy * atten * dt,
                state.pose.theta,
            )
            new_v = math.hypot(cmd.vx, cmd.vy) * atten
            new_omega = 0.0
        else:
            new_v = cmd.v * atten
            new_omega = cmd.omega * atten
            new_pose = _integrate_unicycle(state.pose, new_v, new_omega, dt)
        eps = 1e-9
        new_pose = Pose2D(
            min(max(new_pose.x, eps), world.extent_x - eps),
            min(max(new_pose.y, eps), world.extent_y - eps),
            new_pose.theta,
        )

    new_state = RobotState(
        pose=new_pose,
        v=new_v if not snagged else 0.0,
        omega=new_omega if not snagged else 0.0,
        radius=state.radius,
        snagged=snagged,
        escape_time=escape if snagged else 0.0,
    )
    collision = collision_check(world, new_pose, state.radius)
    return new_state, EventSet(collision=collision, snag_started=snag_started, snag_released=snag_released)
