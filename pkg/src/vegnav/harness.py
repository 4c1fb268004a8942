"""Closed-loop trials, metrics, and deterministic batch runs.

Each trial steps perceive -> map -> plan -> act at the control period until
the goal is reached, the robot collides, freezes unrecoverably, or times
out. Trials are fully deterministic in (scenario, variant, seed); batch
archives are canonical JSON so identical inputs produce identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import costmap as cm
from . import fewshot, perception, planner
from .scenario import ScenarioSpec
from .world import (Pose2D, RobotState, VegClass, VelocityCommand, build_world,
                    raycast_scan, step_dynamics)


class Outcome(str, Enum):
    SUCCESS = "success"
    FROZEN = "frozen"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    RECOVERY_FAILURE = "recovery_failure"


@dataclass
class PredictionCounters:
    """Per-trial aggregation of the quadrant prediction log against the
    ground-truth dominant class (free/empty quadrants are skipped)."""

    n_predictions: int = 0
    n_actual_negative: int = 0   # quadrants whose dominant class is solid
    n_false_positive: int = 0    # solid quadrants predicted pliable
    n_actual_positive: int = 0
    n_false_negative: int = 0
    n_classifiable: int = 0      # dominant class is one of the 4 trained classes
    n_misclassified: int = 0     # predicted class differs from dominant class

    def log(self, truth: VegClass | None, predicted: perception.QuadrantClassification) -> None:
        if truth is None or truth == VegClass.FREE:
            return
        self.n_predictions += 1
        if truth.solid:
            self.n_actual_negative += 1
            if predicted.pliable:
                self.n_false_positive += 1
        else:
            self.n_actual_positive += 1
            if not predicted.pliable:
                self.n_false_negative += 1
        if 1 <= int(truth) <= 4:
            self.n_classifiable += 1
            if predicted.class_index != int(truth):
                self.n_misclassified += 1


@dataclass
class TrialResult:
    scenario: str
    variant: str
    seed: int
    outcome: Outcome
    t_end: float
    path_length: float
    straight_dist: float
    final_dist: float
    n_recoveries: int
    counters: PredictionCounters
    unsafe_points: list
    trajectory: np.ndarray | None = None
    adverse_events: list = field(default_factory=list)
    recovery_points: list = field(default_factory=list)

    @property
    def progress(self) -> float:
        """Fraction of the start-goal distance closed by the trial."""
        return (self.straight_dist - self.final_dist) / self.straight_dist

    @property
    def normalized_length(self) -> float:
        """Driven length, completed to the goal center, over the straight
        distance (meaningful for successes)."""
        return (self.path_length + self.final_dist) / self.straight_dist

    def to_record(self, include_trajectory: bool = False) -> dict:
        rec = {
            "scenario": self.scenario,
            "variant": self.variant,
            "seed": self.seed,
            "outcome": self.outcome.value,
            "t_end": self.t_end,
            "path_length": self.path_length,
            "straight_dist": self.straight_dist,
            "final_dist": self.final_dist,
            "n_recoveries": self.n_recoveries,
            "n_predictions": self.counters.n_predictions,
            "n_actual_negative": self.counters.n_actual_negative,
            "n_false_positive": self.counters.n_false_positive,
            "n_actual_positive": self.counters.n_actual_positive,
            "n_false_negative": self.counters.n_false_negative,
            "n_classifiable": self.counters.n_classifiable,
            "n_misclassified": self.counters.n_misclassified,
            "unsafe_points": [[x, y] for x, y in self.unsafe_points],
        }
        if include_trajectory and self.trajectory is not None:
            rec["trajectory"] = [[float(a), float(b), float(c)] for a, b, c in self.trajectory]
        return rec


class QuadrantFilter:
    """Temporal smoothing of per-quadrant classifications.

    A quadrant's planning classification only switches to a different class
    after `debounce` consecutive agreeing frames (suppressing one-frame
    misclassification flickers), and only reverts to unmatched after
    `hold_frames` consecutive all-dissimilar frames (so driving out of
    vegetation does not strand the robot inside the inflation halo it just
    cleared). Matching frames of the stable class refresh its distance,
    confidence, and height measure continuously.
    """

    def __init__(self, no_match_distance: float, hold_frames: int, debounce: int = 3):
        self.no_match = no_match_distance
        self.hold_frames = max(1, hold_frames)
        self.debounce = max(1, debounce)
        self._stable: dict[int, tuple | None] = {}
        self._pending: dict[int, tuple[int, int]] = {}
        self._none_count: dict[int, int] = {}

    def update(self, quadrant: int, summary, height: float):
        """Feed one raw frame; returns (summary, height) to plan with, or
        None when the quadrant matches no class."""
        cur = None if summary.distance >= self.no_match else summary.class_index
        if quadrant not in self._stable:
            self._stable[quadrant] = None if cur is None else (summary, height)
            self._none_count[quadrant] = 0
            self._pending[quadrant] = (0, 0)
            return self._stable[quadrant]

        stable = self._stable[quadrant]
        stable_class = None if stable is None else stable[0].class_index
        if cur == stable_class:
            if cur is not None:
                stable = (summary, height)
                self._stable[quadrant] = stable
            self._none_count[quadrant] = 0
            self._pending[quadrant] = (0, 0)
            return stable

        if cur is None:
            self._none_count[quadrant] += 1
            self._pending[quadrant] = (0, 0)
            if self._none_count[quadrant] >= self.hold_frames:
                self._stable[quadrant] = None
                return None
            return stable

        pend_class, count = self._pending[quadrant]
        count = count + 1 if pend_class == cur else 1
        self._pending[quadrant] = (cur, count)
        self._none_count[quadrant] = 0
        if count >= self.debounce or stable is None:
            self._stable[quadrant] = (summary, height)
            self._pending[quadrant] = (0, 0)
            return self._stable[quadrant]
        return stable


@dataclass
class FewshotBackend:
    """Trained-embedder classifier backend for the trial loop.

    For each quadrant a synthetic descriptor is drawn for the quadrant's
    dominant class (background noise for free/unknown content) and scored
    against the per-class reference sets.
    """

    params: fewshot.EmbedderParams
    references: dict[int, np.ndarray]
    generator: fewshot.DescriptorConfig

    def rows(self, dominants: list[VegClass | None], rng: np.random.Generator) -> np.ndarray:
        matrix = np.empty((4, 4))
        for i, dom in enumerate(dominants):
            if dom is not None and 1 <= int(dom) <= 4:
                desc = fewshot.sample_class_descriptors(self.generator, int(dom), 1, rng)[0]
            else:
                desc = fewshot.sample_background_descriptor(self.generator, rng)
            matrix[i] = perception.classify_fewshot(self.params, desc, self.references)
        return matrix


def run_trial(
    spec: ScenarioSpec,
    variant: str = "vern",
    seed: int = 0,
    classifier: FewshotBackend | str = "oracle",
    initial_unsafe: Iterable[tuple[float, float]] = (),
    record_trajectory: bool = True,
    on_cycle: Callable[[dict], None] | None = None,
) -> TrialResult:
    """Run one closed-loop trial.

    The loop perceives (three scan heights -> inflated binary layers ->
    critical map -> quadrant classification), builds the planning map for
    the variant, re-stamps remembered unsafe points, and either plans a
    velocity or executes the recovery controller. `on_cycle` receives a
    per-cycle snapshot dict (for tests and debugging).
    """
    spec.validate()
    var = planner.get_variant(variant)
    world = build_world(spec)
    pp = spec.planner
    weights = spec.weights
    threshold = weights.admissibility_threshold
    grid = spec.costmap

    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF])
    rng_dyn, rng_per = (np.random.default_rng(s) for s in ss.spawn(2))

    state = RobotState(pose=Pose2D(*spec.start), radius=spec.robot_radius)
    ps = planner.PlannerState(safe_points=deque(maxlen=pp.safe_buffer),
                              unsafe_points=[tuple(p) for p in initial_unsafe])
    history: deque = deque(maxlen=int(round(pp.freeze_window / pp.dt)) + 3)
    counters = PredictionCounters()
    traj = [(state.pose.x, state.pose.y, state.pose.theta)]
    adverse_events: list = []
    recovery_points: list = []
    gx, gy = spec.goal
    straight = math.hypot(gx - spec.start[0], gy - spec.start[1])

    outcome = Outcome.TIMEOUT
    t = 0.0
    n_recoveries = 0
    snag_forced = False
    qfilter = QuadrantFilter(spec.no_match_distance,
                             hold_frames=int(round(spec.classification_hold / pp.dt)))
    detour: tuple[float, float] | None = None

    while t < spec.duration - 1e-9:
        pose = state.pose
        # Perception: three scan heights -> inflated occupancy layers.
        layers = []
        for z in spec.scan.heights:
            scan = raycast_scan(world, pose, z, spec.scan.n_beams, spec.scan.max_range)
            layers.append(cm.inflate(cm.build_layer(scan, grid.size, grid.resolution),
                                     grid.inflation_radius))
        crit = cm.critical_sum(*layers)
        footprints = perception.extract_footprints(world, pose, spec.camera,
                                                   grid.size, grid.resolution)
        dominants = [perception.dominant_class(world, fp) for fp in footprints]
        if classifier == "oracle":
            matrix = perception.classify_oracle(world, footprints, spec.noise, rng_per)
        else:
            matrix = classifier.rows(dominants, rng_per)
        summaries = perception.summarize(matrix, spec.alpha)
        for truth, pred in zip(dominants, summaries):
            counters.log(truth, pred)
        heights = [cm.height_measure(crit, fp) if var.use_height else 0.0 for fp in footprints]

        # Plan on temporally smoothed classifications; quadrants matching no
        # training class keep raw geometry costs.
        effective = [qfilter.update(fp.quadrant, s, h)
                     for fp, s, h in zip(footprints, summaries, heights)]
        eff_summaries = [e[0] if e is not None else s
                         for e, s in zip(effective, summaries)]

        # Planning map for this cycle.
        if var.clearing:
            matched = [(fp, e[0], e[1]) for fp, e in zip(footprints, effective)
                       if e is not None]
            cva = cm.apply_clearing(layers[0], matched, weights)
        else:
            cva = layers[0].copy()
        for ux, uy in ps.unsafe_points:
            cm.mark_unsafe(cva, ux, uy, spec.robot_radius)

        # Control.
        cmd = None
        frozen_now = False
        if ps.mode == planner.PlannerMode.RECOVERING:
            tx, ty = ps.recovery_target
            if pose.distance_to(tx, ty) <= pp.recovery_tol:
                ps.mode = planner.PlannerMode.NORMAL
                ps.recovery_target = None
                n_recoveries += 1
                history.clear()
            else:
                cmd = planner.recovery_command(pose, (tx, ty), pp.k_p, pp.v_max)
        if cmd is None:
            adverse = planner.detect_adverse(history, pp.freeze_window, pp.progress_eps)
            if adverse == planner.AdverseCondition.NONE:
                if detour is not None and pose.distance_to(*detour) <= 0.8:
                    detour = None
                plan_goal = detour if detour is not None else spec.goal
                qmap = planner.quadrant_cell_map(footprints, grid.size)
                sel = planner.select_velocity(
                    pose, state.v, state.omega, cva, plan_goal, pp, threshold,
                    quadrant_map=qmap, classifications=eff_summaries,
                    allow_stunting=var.stunting,
                )
                if sel.frozen:
                    frozen_now = True
                    adverse = planner.AdverseCondition.FREEZING
                else:
                    cmd = VelocityCommand.unicycle(sel.v, sel.omega)
                    ps.mode = (planner.PlannerMode.CAUTIOUS if sel.stunted
                               else planner.PlannerMode.NORMAL)
                    planner.record_safe(ps, pose, t, pp.t_safe)
            if adverse != planner.AdverseCondition.NONE:
                adverse_events.append((t, adverse.value))
                if not var.recovery:
                    outcome = Outcome.FROZEN
                else:
                    ps.unsafe_points.append((pose.x, pose.y))
                    cm.mark_unsafe(cva, pose.x, pose.y, spec.robot_radius)
                    # skip the robot's own stamped core plus any inflation
                    # halo it is physically standing in (proven passable)
                    target = planner.select_recovery_point(
                        ps, (pose.x, pose.y), spec.goal, cva, threshold,
                        skip_radius=spec.robot_radius + grid.inflation_radius + grid.resolution,
                        min_distance=pp.recovery_min_dist,
                    )
                    if target is None:
                        outcome = Outcome.RECOVERY_FAILURE
                    else:
                        ps.recovery_target = target
                        ps.mode = planner.PlannerMode.RECOVERING
                        recovery_points.append(target)
                        history.clear()
                        detour = detour_waypoint(cva, (pose.x, pose.y), spec.goal, threshold)
                        cmd = planner.recovery_command(pose, target, pp.k_p, pp.v_max)

        if on_cycle is not None:
            on_cycle({"t": t, "pose": pose, "mode": ps.mode, "cmd": cmd, "cva": cva,
                      "frozen": frozen_now, "summaries": summaries,
                      "unsafe": list(ps.unsafe_points),
                      "safe": list(ps.safe_points),
                      "terminal": None if outcome == Outcome.TIMEOUT else outcome})
        if cmd is None and outcome in (Outcome.FROZEN, Outcome.RECOVERY_FAILURE):
            break

        # Act.
        force = (spec.force_snag_time is not None and not snag_forced
                 and t >= spec.force_snag_time - 1e-9)
        if cmd is None:
            cmd = VelocityCommand.stop()
        state, events = step_dynamics(state, cmd, world, pp.dt, rng_dyn, force_snag=force)
        if force and events.snag_started:
            snag_forced = True
        t += pp.dt
        new_pose = state.pose
        stalled = (new_pose.x == pose.x and new_pose.y == pose.y
                   and new_pose.theta == pose.theta)
        history.append(planner.StepRecord(
            t=t, x=new_pose.x, y=new_pose.y, theta=new_pose.theta,
            cmd_zero=cmd.is_zero, stalled=stalled and not cmd.is_zero,
            snagged=state.snagged, frozen=frozen_now,
        ))
        traj.append((new_pose.x, new_pose.y, new_pose.theta))

        if events.collision:
            outcome = Outcome.COLLISION
            break
        if new_pose.distance_to(gx, gy) <= spec.goal_tolerance:
            outcome = Outcome.SUCCESS
            break

    arr = np.array(traj)
    seg = np.diff(arr[:, :2], axis=0)
    path_length = float(np.hypot(seg[:, 0], seg[:, 1]).sum()) if len(arr) > 1 else 0.0
    final_dist = float(math.hypot(arr[-1, 0] - gx, arr[-1, 1] - gy))
    return TrialResult(
        scenario=spec.name,
        variant=variant,
        seed=seed,
        outcome=outcome,
        t_end=t,
        path_length=path_length,
        straight_dist=straight,
        final_dist=final_dist,
        n_recoveries=n_recoveries,
        counters=counters,
        unsafe_points=list(ps.unsafe_points),
        trajectory=arr if record_trajectory else None,
        adverse_events=adverse_events,
        recovery_points=recovery_points,
    )


# ---------------------------------------------------------------------------
# Metrics

@dataclass
class MetricsReport:
    scenario: str
    variant: str
    n_trials: int
    success_rate: float
    freezing_rate: float
    collision_rate: float
    timeout_rate: float
    norm_traj_len: float | None
    fpr: float
    progress_failures: float | None

    def to_row(self) -> dict:
        return {
            "scenario": self.scenario,
            "variant": self.variant,
            "success_rate": self.success_rate,
            "freezing_rate": self.freezing_rate,
            "norm_traj_len": self.norm_traj_len,
            "fpr": self.fpr,
            "progress_failures": self.progress_failures,
        }


def _as_record(r) -> dict:
    return r.to_record() if isinstance(r, TrialResult) else r


def compute_metrics(results: Iterable[TrialResult | dict]) -> MetricsReport:
    """Aggregate one (scenario, variant) cell.

    Freezing counts frozen and recovery-failure outcomes, so the four rates
    always sum to 1. Normalized trajectory length averages successes only;
    the false positive rate averages per-trial FPRs over trials that
    encountered at least one solid quadrant; progress averages the fraction
    of the start-goal distance closed by non-successful trials.
    """
    recs = [_as_record(r) for r in results]
    if not recs:
        raise ValueError("no trial results")
    n = len(recs)
    outcomes = [r["outcome"] for r in recs]
    success = sum(o == "success" for o in outcomes)
    freezing = sum(o in ("frozen", "recovery_failure") for o in outcomes)
    collision = sum(o == "collision" for o in outcomes)
    timeout = sum(o == "timeout" for o in outcomes)

    lens = [(r["path_length"] + r["final_dist"]) / r["straight_dist"]
            for r, o in zip(recs, outcomes) if o == "success"]
    fprs = [r["n_false_positive"] / r["n_actual_negative"]
            for r in recs if r["n_actual_negative"] > 0]
    prog = [(r["straight_dist"] - r["final_dist"]) / r["straight_dist"]
            for r, o in zip(recs, outcomes) if o != "success"]
    return MetricsReport(
        scenario=recs[0]["scenario"],
        variant=recs[0]["variant"],
        n_trials=n,
        success_rate=success / n,
        freezing_rate=freezing / n,
        collision_rate=collision / n,
        timeout_rate=timeout / n,
        norm_traj_len=(sum(lens) / len(lens)) if lens else None,
        fpr=(sum(fprs) / len(fprs)) if fprs else 0.0,
        progress_failures=(sum(prog) / len(prog)) if prog else None,
    )


def detour_waypoint(
    cva: cm.CostMap,
    unsafe_pt: tuple[float, float],
    goal: tuple[float, float],
    threshold: float,
    offsets: tuple[float, ...] = (1.6, 1.2, 0.8),
    clearance: float = 0.3,
) -> tuple[float, float] | None:
    """Intermediate target abeam a freshly stamped hazard.

    A bare argmin velocity search stalls at the edge of a blocked spot on
    the goal line instead of rounding it, so after a recovery retreat the
    planner is pointed at a waypoint displaced perpendicular to the
    hazard-goal line. Candidates on both sides at several offsets are
    scored by the costliest cell in a clearance disc around them (so a
    waypoint never lands beside a blocked region); the safest wins, ties
    going to larger offsets and the left side. Returns None when no
    candidate is fully traversable.
    """
    ux, uy = unsafe_pt
    gx, gy = goal
    norm = math.hypot(gx - ux, gy - uy)
    if norm < 1e-9:
        return None
    nx, ny = -(gy - uy) / norm, (gx - ux) / norm
    best = None
    best_cost = math.inf
    for offset in offsets:
        for side in (1.0, -1.0):
            wx, wy = ux + side * offset * nx, uy + side * offset * ny
            if cva.world_to_cell(wx, wy) is None:
                continue
            rows, cols = cm.cells_in_disc(cva.size, cva.size, cva.resolution,
                                          wx - cva.origin_x, wy - cva.origin_y, clearance)
            if rows.size == 0:
                continue
            cost = float(cva.data[rows, cols].max())
            if cost > threshold:
                continue
            if cost < best_cost - 1e-12:
                best_cost = cost
                best = (wx, wy)
        if best is not None:
            return best
    return None


def pooled_fpr(results: Iterable[TrialResult | dict]) -> tuple[float, int]:
    """False positive rate pooled over every logged solid-quadrant
    prediction; returns (rate, denominator)."""
    fp = an = 0
    for r in map(_as_record, results):
        fp += r["n_false_positive"]
        an += r["n_actual_negative"]
    return (fp / an if an else 0.0), an


# ---------------------------------------------------------------------------
# Batch runs and archives

ARCHIVE_FORMAT = "vegnav-archive"
ARCHIVE_VERSION = 1


def derive_seed(base_seed: int, scenario: str, variant: str, index: int) -> int:
    """Stable per-trial seed from the batch key."""
    key = f"{base_seed}|{scenario}|{variant}|{index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def run_batch(
    specs: Iterable[ScenarioSpec],
    variants: Iterable[str],
    n_trials: int,
    base_seed: int = 0,
    classifier: FewshotBackend | str = "oracle",
    include_trajectories: bool = True,
) -> dict:
    """Run every (scenario, variant, trial) combination deterministically
    and return the raw archive dict."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    specs = list(specs)
    variants = list(variants)
    trials = []
    for spec in specs:
        for variant in variants:
            for i in range(n_trials):
                seed = derive_seed(base_seed, spec.name, variant, i)
                result = run_trial(spec, variant, seed, classifier=classifier,
                                   record_trajectory=include_trajectories)
                trials.append((i, result))
    return {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "base_seed": base_seed,
        "n_trials": n_trials,
        "scenarios": {s.name: {"hash": s.canonical_hash()} for s in specs},
        "variants": variants,
        "trials": [dict(r.to_record(include_trajectory=include_trajectories), index=i)
                   for i, r in trials],
    }


def archive_to_json(archive: dict) -> str:
    return json.dumps(archive, sort_keys=True, separators=(",", ":")) + "\n"


def save_archive(archive: dict, path: str | Path) -> None:
    Path(path).write_text(archive_to_json(archive))


def load_archive(path: str | Path) -> dict:
    archive = json.loads(Path(path).read_text())
    if archive.get("format") != ARCHIVE_FORMAT:
        raise ValueError("not a trial archive")
    return archive


def metrics_from_archive(archive: dict) -> list[MetricsReport]:
    """Recompute the metric table from archive records alone."""
    cells: dict[tuple[str, str], list[dict]] = {}
    for rec in archive["trials"]:
        cells.setdefault((rec["scenario"], rec["variant"]), []).append(rec)
    return [compute_metrics(recs) for _, recs in sorted(cells.items())]


CSV_COLUMNS = ["scenario", "variant", "success_rate", "freezing_rate",
               "norm_traj_len", "fpr", "progress_failures"]


def metrics_to_csv(reports: Iterable[MetricsReport]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for rep in reports:
        row = rep.to_row()
        cells = []
        for col in CSV_COLUMNS:
            v = row[col]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.6f}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
