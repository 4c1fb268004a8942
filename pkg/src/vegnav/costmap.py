"""Robot-centered traversability cost maps.

Binary occupancy layers are built from the three lidar scan heights,
inflated by the robot radius, and summed into a critical-obstacle map whose
per-cell values {0, 100, 200, 300} encode how many heights see an obstacle.
The low layer is then "cleared": inside each camera quadrant its costs are
scaled by a function of the quadrant's classification confidence and a
normalized height measure, so confidently-classified pliable vegetation
becomes cheap while solid vegetation stays expensive. Cells around known
unsafe locations are pinned to MAX_COST.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .perception import PLIABLE_CLASS_INDICES, QuadrantClassification, QuadrantFootprint
from .world import ConfigurationError, FrameTransform, ScanLayer, cells_in_disc

OCCUPIED = 100.0
CRIT_MAX = 300.0
HALF_PI = math.pi / 2.0

# Sentinel for cells that must never be traversed (stamped unsafe spots).
MAX_COST = 1.0e9


@dataclass(frozen=True)
class CostmapConfig:
    size: int = 81
    resolution: float = 0.1
    inflation_radius: float = 0.3

    def __post_init__(self):
        if self.size < 3 or self.resolution <= 0 or self.inflation_radius < 0:
            raise ValueError("bad costmap configuration")


@dataclass
class CostMap:
    """Square grid of cell costs, axis-aligned with odom.

    `origin_x/origin_y` locate the grid corner (cell (0, 0) minimum corner)
    in the odom frame; the map is built centered on the robot.
    """

    size: int
    resolution: float
    origin_x: float
    origin_y: float
    data: np.ndarray

    @classmethod
    def centered(cls, x: float, y: float, size: int, resolution: float) -> "CostMap":
        half = size * resolution / 2.0
        return cls(
            size=size,
            resolution=resolution,
            origin_x=x - half,
            origin_y=y - half,
            data=np.zeros((size, size), dtype=float),
        )

    def copy(self) -> "CostMap":
        return CostMap(self.size, self.resolution, self.origin_x, self.origin_y,
                       self.data.copy())

    def transform_to_odom(self) -> FrameTransform:
        return FrameTransform(tx=self.origin_x, ty=self.origin_y, rotation=0.0)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int] | None:
        col = int(math.floor((x - self.origin_x) / self.resolution))
        row = int(math.floor((y - self.origin_y) / self.resolution))
        if 0 <= row < self.size and 0 <= col < self.size:
            return (row, col)
        return None

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.resolution,
            self.origin_y + (row + 0.5) * self.resolution,
        )

    def same_frame(self, other: "CostMap", tol: float = 1e-9) -> bool:
        return (
            self.size == other.size
            and abs(self.resolution - other.resolution) <= tol
            and abs(self.origin_x - other.origin_x) <= tol
            and abs(self.origin_y - other.origin_y) <= tol
        )


@dataclass(frozen=True)
class ClearingWeights:
    """Constants of the cost-clearing function.

    Validity requires w_dense > w_sparse and b_nonpliable > w_dense + 1;
    under those constraints every pliable clearing value stays strictly
    below every non-pliable one (see pliable_clear/nonpliable_clear).
    """

    w_sparse: float = 1.0
    w_dense: float = 2.0
    w_nonpliable: float = 1.0
    b_nonpliable: float = 4.0

    def __post_init__(self):
        if min(self.w_sparse, self.w_dense, self.w_nonpliable, self.b_nonpliable) <= 0:
            raise ConfigurationError("clearing weights must be positive")
        if not self.w_dense > self.w_sparse:
            raise ConfigurationError("w_dense must exceed w_sparse")
        if not self.b_nonpliable > self.w_dense + 1.0:
            raise ConfigurationError("b_nonpliable must exceed w_dense + 1")

    @property
    def max_clear(self) -> float:
        """Largest value clear() can attain (non-pliable, full confidence,
        maximum height); used as the fixed clearing normalizer."""
        return self.w_nonpliable + self.b_nonpliable + 1.0

    @property
    def admissibility_threshold(self) -> float:
        """Cost separating traversable from blocked cells: the infimum of
        normalized non-pliable costs. Pliable-cleared cells always fall
        below it, raw occupied and non-pliable cells above."""
        return self.b_nonpliable / self.max_clear * OCCUPIED


def build_layer(scan: ScanLayer, size: int, resolution: float) -> CostMap:
    """Binary occupancy layer from one scan, centered on the scan origin.

    Each beam with a hit marks the cell containing the point half a cell
    past the reported range along the beam (the entry boundary nudged into
    the occluding cell). Values are {0, 100}.
    """
    cmap = CostMap.centered(scan.origin.x, scan.origin.y, size, resolution)
    hit = scan.hits
    if hit.any():
        r = scan.ranges[hit] + resolution / 2.0
        ex = scan.origin.x + r * np.cos(scan.angles[hit])
        ey = scan.origin.y + r * np.sin(scan.angles[hit])
        cols = np.floor((ex - cmap.origin_x) / resolution).astype(np.int64)
        rows = np.floor((ey - cmap.origin_y) / resolution).astype(np.int64)
        ok = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
        cmap.data[rows[ok], cols[ok]] = OCCUPIED
    return cmap


_STRUCT_CACHE: dict = {}


def _disc_structure(radius: float, resolution: float) -> np.ndarray:
    key = (round(radius, 9), round(resolution, 9))
    st = _STRUCT_CACHE.get(key)
    if st is None:
        k = int(math.floor(radius / resolution + 1e-9))
        ax = np.arange(-k, k + 1)
        dx, dy = np.meshgrid(ax, ax)
        st = (np.hypot(dx, dy) * resolution) <= radius + 1e-9
        _STRUCT_CACHE[key] = st
    return st


def inflate(cmap: CostMap, radius: float) -> CostMap:
    """Dilate occupied cells by a disc of the given radius (C-space
    expansion so the planner can treat the robot as a point)."""
    if radius <= 0:
        return cmap.copy()
    out = cmap.copy()
    grown = ndimage.binary_dilation(cmap.data > 0, structure=_disc_structure(radius, cmap.resolution))
    out.data = np.where(grown, OCCUPIED, 0.0)
    return out


def critical_sum(low: CostMap, mid: CostMap, high: CostMap) -> CostMap:
    """Element-wise sum of the three binary layers; {0,100,200,300} where
    300 marks obstacles seen at all three heights."""
    if not (low.same_frame(mid) and low.same_frame(high)):
        raise ValueError("layers must share dimensions and frame")
    out = low.copy()
    out.data = low.data + mid.data + high.data
    return out


def height_measure(crit: CostMap, footprint: QuadrantFootprint) -> float:
    """Mean critical value over the footprint mapped to [0, pi/2].

    0 means the quadrant is empty at all heights, pi/2 means every cell is
    occupied at all three scan heights. Empty footprints yield 0.
    """
    if footprint.empty:
        return 0.0
    mean = float(crit.data[footprint.cm_rows, footprint.cm_cols].mean())
    return mean / CRIT_MAX * HALF_PI


def pliable_clear(w: np.ndarray | float, kappa: np.ndarray | float, h: np.ndarray | float):
    """Clearing value for grass: grows as confidence drops and with height;
    bounded above by w + 1."""
    return w * (1.0 - kappa) + 2.0 * h / math.pi


def nonpliable_clear(weights: ClearingWeights, kappa, h):
    """Clearing value for solid vegetation: grows with confidence and
    height; bounded below by b_nonpliable."""
    return weights.w_nonpliable * kappa + weights.b_nonpliable + np.sin(h)


def clear_value(info: QuadrantClassification, h: float, weights: ClearingWeights) -> float:
    """Quadrant clearing value from its classification and height measure.

    Pliable quadrants use w_sparse or w_dense on (1 - confidence) plus a
    linear height term; non-pliable quadrants use a confidence-proportional
    term plus b_nonpliable plus sin(height), so the tallest solid obstacles
    cost the most. Any valid weights keep pliable values strictly below
    non-pliable ones.
    """
    if not 0.0 < info.confidence <= 1.0:
        raise ValueError(f"confidence {info.confidence} outside (0, 1]")
    if not 0.0 <= h <= HALF_PI + 1e-12:
        raise ValueError(f"height measure {h} outside [0, pi/2]")
    if info.class_index in PLIABLE_CLASS_INDICES:
        w = weights.w_sparse if info.class_index == 1 else weights.w_dense
        return float(pliable_clear(w, info.confidence, h))
    return float(nonpliable_clear(weights, info.confidence, h))


def apply_clearing(
    low: CostMap,
    quadrants: list[tuple[QuadrantFootprint, QuadrantClassification, float]],
    weights: ClearingWeights,
) -> CostMap:
    """Vegetation-aware map: scale the low layer inside each quadrant by
    clear_value / max_clear.

    With the fixed analytic normalizer, outputs stay in [0, 100]; cells
    outside every footprint keep their low-layer cost, and cells already at
    MAX_COST are preserved. Free cells (cost 0) can never gain cost.
    """
    out = low.copy()
    for footprint, info, h in quadrants:
        if footprint.empty:
            continue
        factor = clear_value(info, h, weights) / weights.max_clear
        rows, cols = footprint.cm_rows, footprint.cm_cols
        cur = out.data[rows, cols]
        scaled = low.data[rows, cols] * factor
        out.data[rows, cols] = np.where(cur >= MAX_COST, cur, scaled)
    return out


UNSAFE_SKIRT_RADIUS = 1.0
UNSAFE_SKIRT_COST = 60.0


def mark_unsafe(
    cmap: CostMap,
    x: float,
    y: float,
    radius: float = 0.3,
    skirt_radius: float = UNSAFE_SKIRT_RADIUS,
    skirt_cost: float = UNSAFE_SKIRT_COST,
) -> bool:
    """Pin the cells within `radius` of an odom point to MAX_COST and lay a
    decaying cost skirt around them.

    The skirt falls linearly from `skirt_cost` at the core edge to zero at
    `skirt_radius` and never lowers an existing cell cost; it keeps the
    skirt admissible but expensive, so the planner is steered around the
    remembered hazard instead of braking straight into the pinned core.
    Returns False without stamping when the point itself falls outside the
    grid (the caller keeps it on its unsafe list for later cycles).
    Stamping is idempotent.
    """
    if cmap.world_to_cell(x, y) is None:
        return False
    lx = x - cmap.origin_x
    ly = y - cmap.origin_y
    if skirt_radius > radius:
        rows, cols = cells_in_disc(cmap.size, cmap.size, cmap.resolution, lx, ly, skirt_radius)
        cx = (cols + 0.5) * cmap.resolution
        cy = (rows + 0.5) * cmap.resolution
        dist = np.hypot(cx - lx, cy - ly)
        fall = np.clip((skirt_radius - dist) / (skirt_radius - radius), 0.0, 1.0)
        cmap.data[rows, cols] = np.maximum(cmap.data[rows, cols], skirt_cost * fall)
    rows, cols = cells_in_disc(cmap.size, cmap.size, cmap.resolution, lx, ly, radius)
    cmap.data[rows, cols] = MAX_COST
    return True


def to_text(cmap: CostMap) -> str:
    """Portable text dump: header with dims/resolution/origin, then
    row-major cell values. Round-trips exactly via from_text."""
    lines = [
        "vegnav-costmap 1",
        f"{cmap.size} {cmap.resolution!r} {cmap.origin_x!r} {cmap.origin_y!r}",
    ]
    for row in cmap.data:
        lines.append(" ".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> CostMap:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "vegnav-costmap 1":
        raise ValueError("not a costmap dump")
    size_s, res_s, ox_s, oy_s = lines[1].split()
    size = int(size_s)
    data = np.array([[float(v) for v in line.split()] for line in lines[2 : 2 + size]])
    if data.shape != (size, size):
        raise ValueError("corrupt costmap dump")
    return CostMap(size, float(res_s), float(ox_s), float(oy_s), data)
