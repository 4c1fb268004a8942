"""Quadrant perception: project the forward camera view onto the ground,
classify each quadrant, and summarize class / distance / confidence.

The camera's view is modeled as a forward wedge split into four ground
footprints mirroring an image split into quadrants: the bottom half of the
image sees the near range band, the top half the far band, and the image
left/right halves map to the corresponding sides of the robot. Classifiers
return a 4x4 matrix of per-quadrant, per-class dissimilarity distances in
[0, 1]; row minima give the predicted class and its confidence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fewshot
from .world import Pose2D, VegClass, WorldGrid, wrap_angles

N_CLASSES = 4
PLIABLE_CLASS_INDICES = (1, 2)  # sparse grass, dense grass


@dataclass(frozen=True)
class CameraModel:
    """Forward wedge geometry.

    `r_near`/`r_far` split the wedge into the near band (bottom image half)
    and far band (top half). With `image_left_is_world_left` the left image
    quadrants (1 = top-left, 3 = bottom-left) see the robot's left side.
    """

    fov_deg: float = 90.0
    r_near: float = 2.0
    r_far: float = 4.0
    image_left_is_world_left: bool = True

    def __post_init__(self):
        if not 0.0 < self.fov_deg <= 360.0:
            raise ValueError("camera fov must be in (0, 360] degrees")
        if not 0.0 < self.r_near < self.r_far:
            raise ValueError("range bands must satisfy 0 < r_near < r_far")


@dataclass(frozen=True)
class NoiseModel:
    """Simulated classifier behavior.

    The true class entry of a quadrant's row sits near `d_true`, all other
    entries near `d_false`, with optional Gaussian jitter `sigma`. With
    probability `p_mis` a quadrant is misclassified: its true-class entry is
    swapped with a random class of the opposite pliability group.
    """

    d_true: float = 0.1
    d_false: float = 0.8
    sigma: float = 0.0
    p_mis: float = 0.0


@dataclass
class QuadrantFootprint:
    """Ground cells seen by one image quadrant.

    Holds both the cost-map cell indices (used for clearing and height
    estimation) and the world cell indices (used for ground truth).
    """

    quadrant: int
    cm_rows: np.ndarray
    cm_cols: np.ndarray
    world_rows: np.ndarray
    world_cols: np.ndarray

    @property
    def empty(self) -> bool:
        return self.cm_rows.size == 0


@dataclass(frozen=True)
class QuadrantClassification:
    quadrant: int
    class_index: int  # 1..4
    distance: float
    confidence: float
    pliable: bool


_OFFSET_CACHE: dict = {}


def _cell_centers(size: int, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    key = (size, round(resolution, 9))
    got = _OFFSET_CACHE.get(key)
    if got is None:
        ax = (np.arange(size) + 0.5) * resolution
        got = np.meshgrid(ax, ax)  # (cx, cy) indexed [row, col]
        _OFFSET_CACHE[key] = got
    return got


def extract_footprints(
    world: WorldGrid,
    pose: Pose2D,
    camera: CameraModel,
    grid_size: int,
    grid_resolution: float,
) -> list[QuadrantFootprint]:
    """Partition the robot-centered grid's forward wedge into 4 footprints.

    Quadrant 1 = far-left, 2 = far-right, 3 = near-left, 4 = near-right
    (left/right mirrored when the camera convention says so). Every in-wedge
    cell lands in exactly one footprint.
    """
    half_extent = grid_size * grid_resolution / 2.0
    ox = pose.x - half_extent
    oy = pose.y - half_extent
    cx, cy = _cell_centers(grid_size, grid_resolution)
    dx = (cx + ox) - pose.x
    dy = (cy + oy) - pose.y
    rng = np.hypot(dx, dy)
    rel = wrap_angles(np.arctan2(dy, dx) - pose.theta)

    half_fov = math.radians(camera.fov_deg) / 2.0
    in_fov = (np.abs(rel) <= half_fov) & (rng < camera.r_far)
    near = rng < camera.r_near
    left = rel >= 0.0
    if not camera.image_left_is_world_left:
        left = ~left

    quadrant_masks = {
        1: in_fov & ~near & left,
        2: in_fov & ~near & ~left,
        3: in_fov & near & left,
        4: in_fov & near & ~left,
    }
    out = []
    for q, mask in quadrant_masks.items():
        rows, cols = np.nonzero(mask)
        wx = cx[rows, cols] + ox
        wy = cy[rows, cols] + oy
        valid = (wx >= 0) & (wx < world.extent_x) & (wy >= 0) & (wy < world.extent_y)
        wr = (wy[valid] / world.resolution).astype(np.int64)
        wc = (wx[valid] / world.resolution).astype(np.int64)
        out.append(QuadrantFootprint(q, rows, cols, wr, wc))
    return out


def dominant_class(world: WorldGrid, footprint: QuadrantFootprint) -> VegClass | None:
    """Majority vegetation class over the footprint's vegetated world cells.

    Bare ground does not vote: an image quadrant showing a single tree on
    open soil still reads as a tree. A footprint with no vegetated cells is
    FREE; one with no in-world cells at all is None. Ties break to the
    lowest class value.
    """
    if footprint.world_rows.size == 0:
        return None
    counts = np.bincount(
        world.classes[footprint.world_rows, footprint.world_cols], minlength=len(VegClass)
    )
    if counts[1:].sum() == 0:
        return VegClass.FREE
    return VegClass(1 + int(np.argmax(counts[1:])))


def _opposite_group(class_index: int) -> tuple[int, ...]:
    return (3, 4) if class_index in PLIABLE_CLASS_INDICES else (1, 2)


def classify_oracle(
    world: WorldGrid,
    footprints: list[QuadrantFootprint],
    noise: NoiseModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Ground-truth-backed classifier: one distance row per quadrant.

    The dominant class of the quadrant gets an entry near d_true, the rest
    near d_false. Quadrants dominated by free space or unknown obstacles get
    all-dissimilar rows (no training class matches). Misclassification swaps
    the true entry with a random class on the other side of the pliable /
    non-pliable divide, so a misclassified quadrant always flips group.
    Entries are clipped to [0, 1].
    """
    matrix = np.empty((N_CLASSES, N_CLASSES), dtype=float)
    for i, fp in enumerate(footprints):
        dom = dominant_class(world, fp)
        row = np.full(N_CLASSES, noise.d_false, dtype=float)
        true_idx = None
        if dom is not None and 1 <= int(dom) <= 4:
            true_idx = int(dom) - 1
            row[true_idx] = noise.d_true
        if noise.sigma > 0.0:
            row = row + rng.normal(0.0, noise.sigma, N_CLASSES)
        if true_idx is not None and noise.p_mis > 0.0 and rng.random() < noise.p_mis:
            group = _opposite_group(true_idx + 1)
            j = group[rng.integers(0, len(group))] - 1
            row[true_idx], row[j] = row[j], row[true_idx]
        matrix[i] = np.clip(row, 0.0, 1.0)
    return matrix


def classify_fewshot(
    params: "fewshot.EmbedderParams",
    descriptor: np.ndarray,
    references: dict[int, np.ndarray],
) -> np.ndarray:
    """One prediction row from the trained embedder.

    Entry j is the squashed minimum embedding distance between the quadrant
    descriptor and the class-j reference set, so the row lives in [0, 1)
    like the oracle's.
    """
    dists = fewshot.min_class_distance(params, descriptor, references)
    return fewshot.squash_distance(dists)


def summarize(matrix: np.ndarray, alpha: float) -> list[QuadrantClassification]:
    """Reduce a prediction matrix to per-quadrant class/distance/confidence.

    Per row: the class is the argmin entry (ties to the lowest index), the
    distance is that minimum, and confidence = exp(-alpha * distance), which
    is 1 at distance 0 and decays toward 0 for dissimilar rows.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (N_CLASSES, N_CLASSES):
        raise ValueError(f"expected a 4x4 prediction matrix, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)) or matrix.min() < 0.0 or matrix.max() > 1.0:
        raise ValueError("prediction matrix entries must be finite and in [0, 1]")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    out = []
    for i in range(N_CLASSES):
        j = int(np.argmin(matrix[i]))
        d = float(matrix[i, j])
        out.append(
            QuadrantClassification(
                quadrant=i + 1,
                class_index=j + 1,
                distance=d,
                confidence=math.exp(-alpha * d),
                pliable=(j + 1) in PLIABLE_CLASS_INDICES,
            )
        )
    return out
