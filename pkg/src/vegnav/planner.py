"""Dynamic-window local planner over the vegetation-aware cost map.

A velocity grid over the intersection of the speed limits and the
acceleration-reachable window is rolled out with exact constant-velocity
arcs and scored by a weighted sum of heading error, accumulated map cost,
and velocity shortfall. Trajectories touching cells above the admissibility
threshold (or pinned unsafe cells) are rejected outright. When the chosen
trajectory runs through cost-bearing cells of a low-confidence quadrant,
the speed limits are rescaled by that confidence and the search repeats
(cautious behavior). A separate watchdog classifies stalls as freezing or
entrapment, and the recovery machinery retreats to a remembered safe point
with a pure holonomic proportional command.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .costmap import MAX_COST, CostMap
from .perception import QuadrantClassification, QuadrantFootprint
from .world import Pose2D, VelocityCommand, wrap_angle, wrap_angles


@dataclass(frozen=True)
class PlannerParams:
    gamma_head: float = 1.0
    gamma_obs: float = 2.0
    gamma_vel: float = 0.5
    v_max: float = 1.0
    omega_max: float = 1.5
    accel_v: float = 1.0
    accel_omega: float = 2.0
    dt: float = 0.2
    horizon: float = 1.5
    rollout_step: float = 0.1
    n_v: int = 11
    n_omega: int = 21
    k_p: float = 1.0
    freeze_window: float = 5.0
    progress_eps: float = 0.15
    t_safe: float = 1.0
    safe_buffer: int = 256
    recovery_tol: float = 0.2
    recovery_min_dist: float = 0.8

    def __post_init__(self):
        positive = (
            self.gamma_head, self.gamma_obs, self.gamma_vel, self.v_max, self.omega_max,
            self.accel_v, self.accel_omega, self.dt, self.horizon, self.rollout_step,
            self.k_p, self.freeze_window, self.progress_eps, self.t_safe, self.recovery_tol,
        )
        if min(positive) <= 0 or self.recovery_min_dist < 0:
            raise ValueError("planner parameters must be positive")
        if self.n_v < 5 or self.n_omega < 5:
            raise ValueError("velocity grid needs at least 5 samples per axis")
        if self.safe_buffer < 1:
            raise ValueError("safe buffer must hold at least one point")


class PlannerMode(Enum):
    NORMAL = "normal"
    CAUTIOUS = "cautious"
    RECOVERING = "recovering"


class AdverseCondition(Enum):
    NONE = "none"
    FREEZING = "freezing"
    ENTRAPMENT = "entrapment"


@dataclass(frozen=True)
class VelocityWindow:
    """Sampled velocity bounds: the speed-limit box intersected with the
    acceleration-reachable box. Component boxes are kept for provenance."""

    v_lo: float
    v_hi: float
    omega_lo: float
    omega_hi: float
    limit_v: tuple[float, float]
    limit_omega: tuple[float, float]
    reach_v: tuple[float, float]
    reach_omega: tuple[float, float]

    def contains(self, v: float, omega: float, tol: float = 1e-9) -> bool:
        return (self.v_lo - tol <= v <= self.v_hi + tol
                and self.omega_lo - tol <= omega <= self.omega_hi + tol)


def dynamic_window(v: float, omega: float, params: PlannerParams, scale: float = 1.0) -> VelocityWindow:
    """Reachable velocities for the next control period under acceleration
    limits, clipped to the (possibly confidence-scaled) speed limits.

    If braking cannot re-enter the scaled limits within one period, the
    window collapses to the hardest-braking reachable velocity.
    """
    limit_v = (0.0, scale * params.v_max)
    limit_omega = (-scale * params.omega_max, scale * params.omega_max)
    reach_v = (v - params.accel_v * params.dt, v + params.accel_v * params.dt)
    reach_omega = (omega - params.accel_omega * params.dt, omega + params.accel_omega * params.dt)

    v_lo = max(limit_v[0], reach_v[0])
    v_hi = min(limit_v[1], reach_v[1])
    if v_lo > v_hi:
        v_lo = v_hi = max(0.0, reach_v[0])
    o_lo = max(limit_omega[0], reach_omega[0])
    o_hi = min(limit_omega[1], reach_omega[1])
    if o_lo > o_hi:
        o_lo = o_hi = reach_omega[0] if reach_omega[0] > limit_omega[1] else reach_omega[1]
    return VelocityWindow(v_lo, v_hi, o_lo, o_hi, limit_v, limit_omega, reach_v, reach_omega)


@dataclass(frozen=True)
class Trajectory:
    """Forward-simulated poses (n, 3) at fixed steps from the start pose."""

    poses: np.ndarray
    v: float
    omega: float

    @property
    def end(self) -> Pose2D:
        x, y, th = self.poses[-1]
        return Pose2D(float(x), float(y), float(th))


def _rollout_batch(pose: Pose2D, vs: np.ndarray, ws: np.ndarray, horizon: float, step: float):
    """Closed-form arc integration for a batch of (v, omega) pairs.

    Returns x, y of shape (n_samples, n_points) and the per-sample final
    heading. Uses the exact circular arc for turning samples and the
    straight-line limit otherwise.
    """
    n_steps = int(round(horizon / step))
    t = np.arange(n_steps + 1) * step
    v = vs[:, None]
    w = ws[:, None]
    turning = np.abs(ws) > 1e-12
    w_safe = np.where(turning, ws, 1.0)[:, None]
    th0 = pose.theta
    th = th0 + w_safe * t
    radius = v / w_safe
    x_arc = pose.x + radius * (np.sin(th) - math.sin(th0))
    y_arc = pose.y - radius * (np.cos(th) - math.cos(th0))
    x_str = pose.x + v * t * math.cos(th0)
    y_str = pose.y + v * t * math.sin(th0)
    tm = turning[:, None]
    x = np.where(tm, x_arc, x_str)
    y = np.where(tm, y_arc, y_str)
    theta_end = wrap_angles(th0 + ws * t[-1])
    return x, y, theta_end


def rollout(pose: Pose2D, v: float, omega: float, horizon: float, step: float) -> Trajectory:
    """Constant-velocity rollout starting at the current pose."""
    if step <= 0 or horizon <= 0:
        raise ValueError("horizon and step must be positive")
    x, y, _ = _rollout_batch(pose, np.array([v]), np.array([omega]), horizon, step)
    n = x.shape[1]
    t = np.arange(n) * step
    theta = wrap_angles(pose.theta + omega * t)
    poses = np.stack([x[0], y[0], theta], axis=1)
    return Trajectory(poses=poses, v=v, omega=omega)


@dataclass
class _GridEval:
    q: np.ndarray
    head: np.ndarray
    obs: np.ndarray
    vel: np.ndarray
    admissible: np.ndarray
    ids_sorted: np.ndarray
    take: np.ndarray
    vals: np.ndarray


def _evaluate_samples(
    pose: Pose2D,
    vs: np.ndarray,
    ws: np.ndarray,
    cmap: CostMap,
    goal: tuple[float, float],
    params: PlannerParams,
    threshold: float,
) -> _GridEval:
    x, y, theta_end = _rollout_batch(pose, vs, ws, params.horizon, params.rollout_step)
    n = cmap.size
    col = np.floor((x - cmap.origin_x) / cmap.resolution).astype(np.int64)
    row = np.floor((y - cmap.origin_y) / cmap.resolution).astype(np.int64)
    valid = (col >= 0) & (col < n) & (row >= 0) & (row < n)
    ids = np.where(valid, row * n + col, n * n)

    # Unique visited cells per sample: sort ids and keep first occurrences.
    ids_sorted = np.sort(ids, axis=1)
    first = np.ones_like(ids_sorted, dtype=bool)
    first[:, 1:] = ids_sorted[:, 1:] != ids_sorted[:, :-1]
    in_grid = ids_sorted < n * n
    take = first & in_grid
    flat = np.where(in_grid, ids_sorted, 0)
    vals = cmap.data.ravel()[flat]
    vals = np.where(take, vals, 0.0)

    cell_sum = vals.sum(axis=1)
    cell_cnt = take.sum(axis=1)
    cell_max = vals.max(axis=1)
    obs = cell_sum / (np.maximum(cell_cnt, 1) * 100.0)
    admissible = cell_max <= threshold

    gx, gy = goal
    head = np.abs(wrap_angles(np.arctan2(gy - y[:, -1], gx - x[:, -1]) - theta_end)) / math.pi
    vel = (params.v_max - vs) / params.v_max
    q = params.gamma_head * head + params.gamma_obs * obs + params.gamma_vel * vel
    q = np.where(admissible, q, np.inf)
    return _GridEval(q, head, obs, vel, admissible, ids_sorted, take, vals)


@dataclass(frozen=True)
class ObjectiveCost:
    head: float
    obs: float
    vel: float
    total: float


def objective(
    pose: Pose2D,
    v: float,
    omega: float,
    cmap: CostMap,
    goal: tuple[float, float],
    params: PlannerParams,
    threshold: float = MAX_COST,
) -> ObjectiveCost:
    """Score one velocity pair.

    head: final-pose heading error to the goal, normalized to [0, 1];
    obs: mean cost of the unique cells under the rollout, / 100 (poses
    leaving the grid are skipped); vel: shortfall below v_max. A rollout
    touching any cell above `threshold` (MAX_COST in particular) scores
    +inf.
    """
    ev = _evaluate_samples(pose, np.array([v]), np.array([omega]), cmap, goal, params, threshold)
    return ObjectiveCost(float(ev.head[0]), float(ev.obs[0]), float(ev.vel[0]), float(ev.q[0]))


def admissible(
    pose: Pose2D,
    v: float,
    omega: float,
    cmap: CostMap,
    params: PlannerParams,
    threshold: float,
) -> bool:
    """True iff the rollout never crosses a cell costlier than the
    threshold (pliable-cleared cells pass; raw occupied, non-pliable and
    pinned cells fail)."""
    ev = _evaluate_samples(pose, np.array([v]), np.array([omega]), cmap, (pose.x, pose.y), params, threshold)
    return bool(ev.admissible[0])


@dataclass(frozen=True)
class SelectResult:
    frozen: bool
    v: float = 0.0
    omega: float = 0.0
    q: float = math.inf
    stunted: bool = False
    kappa: float = 1.0
    window: VelocityWindow | None = None


def _sample_axis(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _min_kappa_on_path(
    ev: _GridEval, best: int, quadrant_map: np.ndarray | None,
    classifications: list[QuadrantClassification] | None,
) -> float:
    """Lowest classification confidence among quadrants where the chosen
    trajectory actually incurs cost. Free-riding through zero-cost cells of
    a low-confidence quadrant does not trigger caution."""
    if quadrant_map is None or not classifications:
        return 1.0
    take = ev.take[best] & (ev.vals[best] > 0.0) & (ev.vals[best] < MAX_COST)
    if not take.any():
        return 1.0
    qids = quadrant_map.ravel()[ev.ids_sorted[best][take]]
    qids = qids[qids >= 0]
    if qids.size == 0:
        return 1.0
    return min(classifications[q].confidence for q in np.unique(qids))


def select_velocity(
    pose: Pose2D,
    v: float,
    omega: float,
    cmap: CostMap,
    goal: tuple[float, float],
    params: PlannerParams,
    threshold: float,
    quadrant_map: np.ndarray | None = None,
    classifications: list[QuadrantClassification] | None = None,
    allow_stunting: bool = True,
) -> SelectResult:
    """Grid search for the minimum-cost admissible velocity.

    Searches an n_v x n_omega grid over the dynamic window. If the best
    trajectory crosses cost-bearing cells whose quadrant confidence is
    below 1, the speed limits are rescaled by the lowest such confidence
    and the search repeats over the stunted window. Returns Frozen when no
    admissible sample exists.
    """
    window = dynamic_window(v, omega, params)
    vs_ax = _sample_axis(window.v_lo, window.v_hi, params.n_v)
    ws_ax = _sample_axis(window.omega_lo, window.omega_hi, params.n_omega)
    vs = np.repeat(vs_ax, params.n_omega)
    ws = np.tile(ws_ax, params.n_v)
    ev = _evaluate_samples(pose, vs, ws, cmap, goal, params, threshold)
    if not ev.admissible.any():
        return SelectResult(frozen=True, window=window)
    best = int(np.argmin(ev.q))

    kappa = _min_kappa_on_path(ev, best, quadrant_map, classifications)
    if not allow_stunting or kappa >= 1.0 - 1e-12:
        return SelectResult(False, float(vs[best]), float(ws[best]), float(ev.q[best]),
                            stunted=False, kappa=kappa, window=window)

    window2 = dynamic_window(v, omega, params, scale=kappa)
    vs_ax = _sample_axis(window2.v_lo, window2.v_hi, params.n_v)
    ws_ax = _sample_axis(window2.omega_lo, window2.omega_hi, params.n_omega)
    vs2 = np.repeat(vs_ax, params.n_omega)
    ws2 = np.tile(ws_ax, params.n_v)
    ev2 = _evaluate_samples(pose, vs2, ws2, cmap, goal, params, threshold)
    if not ev2.admissible.any():
        return SelectResult(frozen=True, stunted=True, kappa=kappa, window=window2)
    best2 = int(np.argmin(ev2.q))
    return SelectResult(False, float(vs2[best2]), float(ws2[best2]), float(ev2.q[best2]),
                        stunted=True, kappa=kappa, window=window2)


# ---------------------------------------------------------------------------
# Stall detection and recovery

@dataclass(frozen=True)
class StepRecord:
    t: float
    x: float
    y: float
    theta: float
    cmd_zero: bool
    stalled: bool  # commanded nonzero motion yet the pose did not change at all
    snagged: bool
    frozen: bool = False


@dataclass
class PlannerState:
    mode: PlannerMode = PlannerMode.NORMAL
    safe_points: deque = field(default_factory=lambda: deque(maxlen=256))
    unsafe_points: list = field(default_factory=list)
    recovery_target: tuple[float, float] | None = None
    last_safe_time: float = -math.inf


def detect_adverse(
    history, window: float, eps: float, frozen_now: bool = False
) -> AdverseCondition:
    """Classify the recent motion history.

    An empty velocity space (frozen planner) is freezing immediately.
    Otherwise the trailing `window` seconds are examined: entrapment means
    every step commanded motion but the pose never changed at all; freezing
    means net displacement under `eps` while motion was commanded and the
    robot was never snagged. Histories shorter than the window detect
    nothing.
    """
    if frozen_now or (history and history[-1].frozen):
        return AdverseCondition.FREEZING
    if not history:
        return AdverseCondition.NONE
    records = list(history)
    t_end = records[-1].t
    if t_end - records[0].t < window - 1e-9:
        return AdverseCondition.NONE
    win = [r for r in records if r.t >= t_end - window - 1e-9]
    if all((not r.cmd_zero) and r.stalled for r in win):
        return AdverseCondition.ENTRAPMENT
    net = math.hypot(win[-1].x - win[0].x, win[-1].y - win[0].y)
    if net < eps and any(not r.cmd_zero for r in win) and not any(r.snagged for r in win):
        return AdverseCondition.FREEZING
    return AdverseCondition.NONE


def record_safe(
    state: PlannerState, pose: Pose2D, t: float, t_safe: float, min_spacing: float = 0.5
) -> bool:
    """Append the pose to the safe ring buffer every t_safe seconds (only
    called on cycles with no adverse condition). Points closer than
    min_spacing to the last stored one are skipped, so slow phases do not
    degenerate the buffer into a clump of near-duplicates. Returns True on
    append."""
    if t - state.last_safe_time < t_safe - 1e-9:
        return False
    if state.safe_points:
        lx, ly = state.safe_points[-1]
        if math.hypot(pose.x - lx, pose.y - ly) < min_spacing:
            return False
    state.safe_points.append((pose.x, pose.y))
    state.last_safe_time = t
    return True


def segment_traversable(
    cmap: CostMap,
    start: tuple[float, float],
    end: tuple[float, float],
    threshold: float,
    skip_radius: float = 0.0,
) -> bool:
    """Check that the straight segment crosses only traversable map cells.

    Cells within `skip_radius` of the start are ignored (the robot's own
    just-stamped location). Any cell above the threshold, at MAX_COST, or
    outside the map fails the check.
    """
    sx, sy = start
    ex, ey = end
    length = math.hypot(ex - sx, ey - sy)
    n = max(1, int(math.ceil(length / (cmap.resolution / 2.0))))
    for i in range(n + 1):
        f = i / n
        px = sx + f * (ex - sx)
        py = sy + f * (ey - sy)
        if math.hypot(px - sx, py - sy) <= skip_radius:
            continue
        cell = cmap.world_to_cell(px, py)
        if cell is None:
            return False
        if cmap.data[cell] > threshold:
            return False
    return True


def select_recovery_point(
    state: PlannerState,
    robot_xy: tuple[float, float],
    goal: tuple[float, float],
    cmap: CostMap,
    threshold: float,
    skip_radius: float,
    min_distance: float = 0.0,
) -> tuple[float, float] | None:
    """Choose the stored safe point closest to the goal whose straight
    segment from the robot stays traversable on the current cleared map.

    Points closer to the robot than `min_distance` are not candidates:
    retreating a real distance lets the planner re-approach the stamped
    unsafe spot with enough speed to swerve around it instead of crawling
    back into it. Returns None when no stored point qualifies (the robot
    cannot self-recover)."""
    best = None
    best_d = math.inf
    gx, gy = goal
    keepout = max(min_distance, skip_radius)
    for px, py in state.safe_points:
        if math.hypot(px - robot_xy[0], py - robot_xy[1]) <= keepout:
            continue
        if not segment_traversable(cmap, robot_xy, (px, py), threshold, skip_radius):
            continue
        d = math.hypot(gx - px, gy - py)
        if d < best_d - 1e-12:
            best_d = d
            best = (px, py)
    return best


def recovery_command(
    pose: Pose2D, target: tuple[float, float], k_p: float, v_max: float
) -> VelocityCommand:
    """Proportional holonomic pull toward the recovery point, clamped to
    v_max, with no rotational component."""
    vx = k_p * (target[0] - pose.x)
    vy = k_p * (target[1] - pose.y)
    speed = math.hypot(vx, vy)
    if speed > v_max:
        vx *= v_max / speed
        vy *= v_max / speed
    return VelocityCommand.translate(vx, vy)


# ---------------------------------------------------------------------------
# Planner variants

@dataclass(frozen=True)
class PlannerVariant:
    name: str
    clearing: bool
    use_height: bool
    recovery: bool
    stunting: bool


VARIANTS = {
    "vern": PlannerVariant("vern", clearing=True, use_height=True, recovery=True, stunting=True),
    "vern-no-height": PlannerVariant("vern-no-height", clearing=True, use_height=False,
                                     recovery=True, stunting=True),
    "vern-no-recovery": PlannerVariant("vern-no-recovery", clearing=True, use_height=True,
                                       recovery=False, stunting=True),
    "dwa-baseline": PlannerVariant("dwa-baseline", clearing=False, use_height=False,
                                   recovery=False, stunting=False),
}


def get_variant(name: str) -> PlannerVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown planner variant {name!r}; choose from {sorted(VARIANTS)}") from None


def quadrant_cell_map(footprints: list[QuadrantFootprint], size: int) -> np.ndarray:
    """Cell -> quadrant-index lookup (0-based; -1 outside every quadrant)."""
    qmap = np.full((size, size), -1, dtype=np.int64)
    for fp in footprints:
        qmap[fp.cm_rows, fp.cm_cols] = fp.quadrant - 1
    return qmap
