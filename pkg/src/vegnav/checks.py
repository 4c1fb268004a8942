"""Built-in property suites behind the `check-invariants` CLI command.

Each check runs a randomized-but-seeded probe of one library invariant and
returns (name, passed, detail). These are quick smoke-level versions of the
full test suite, suitable for install verification.
"""
from __future__ import annotations

import math

import numpy as np

from . import fewshot
from .costmap import ClearingWeights, nonpliable_clear, pliable_clear
from .planner import PlannerParams, dynamic_window, select_velocity
from .costmap import CostMap
from .world import Pose2D, build_world, raycast_scan
from .scenario import ScenarioSpec, VegBlob

HALF_PI = math.pi / 2.0


def check_clearing_ordering(n_weights: int = 25, n_samples: int = 20000, seed: int = 0):
    """Every pliable clearing value must stay below every non-pliable one
    for any valid weights; pliable <= w_dense + 1 and non-pliable >=
    b_nonpliable."""
    rng = np.random.default_rng(seed)
    for _ in range(n_weights):
        ws = rng.uniform(0.1, 5.0)
        wd = ws + rng.uniform(0.1, 5.0)
        wn = rng.uniform(0.1, 5.0)
        bn = wd + 1.0 + rng.uniform(0.01, 5.0)
        w = ClearingWeights(ws, wd, wn, bn)
        kappa = rng.uniform(1e-9, 1.0, n_samples)
        h = rng.uniform(0.0, HALF_PI, n_samples)
        pv = np.maximum(pliable_clear(w.w_sparse, kappa, h), pliable_clear(w.w_dense, kappa, h))
        npv = nonpliable_clear(w, kappa, h)
        if not (pv.max() < npv.min() and pv.max() <= wd + 1.0 and npv.min() >= bn):
            return ("clearing-ordering", False, f"violated for weights {w}")
    return ("clearing-ordering", True, f"{n_weights} weight draws x {n_samples} samples")


def check_gradient(n_configs: int = 20, seed: int = 0, eps: float = 1e-5, tol: float = 1e-4):
    """Analytic contrastive-loss gradients must match central finite
    differences away from the hinge kink."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_configs:
        params = fewshot.init_params(6, 5, 4, seed=int(rng.integers(2**31)))
        x1 = rng.normal(0, 1, 6)
        x2 = rng.normal(0, 1, 6)
        label = int(rng.integers(0, 2))
        d = fewshot.pair_distance(fewshot.embed(params, x1), fewshot.embed(params, x2))
        if abs(d - 1.0) < 1e-3:
            continue
        _, grad = fewshot.loss_gradient(params, x1, x2, label, 1.0)
        flat = params.flatten()
        gflat = grad.flatten()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            up = flat.copy(); up[i] += eps
            dn = flat.copy(); dn[i] -= eps
            pu = fewshot.EmbedderParams.from_flat(up, 6, 5, 4)
            pd = fewshot.EmbedderParams.from_flat(dn, 6, 5, 4)
            fd[i] = (fewshot.pair_loss(pu, x1, x2, label, 1.0)
                     - fewshot.pair_loss(pd, x1, x2, label, 1.0)) / (2 * eps)
        rel = np.abs(gflat - fd) / np.maximum(np.abs(fd), 1e-6)
        worst = max(worst, float(rel.max()))
        done += 1
    ok = worst < tol
    return ("contrastive-gradient", ok, f"max relative error {worst:.2e}")


def check_raycast(seed: int = 0, n_worlds: int = 4):
    """Reported hit ranges must agree with a fine point-sampling march to
    within one cell."""
    rng = np.random.default_rng(seed)
    for k in range(n_worlds):
        spec = ScenarioSpec(
            name="probe", grid_width=60, grid_height=60, resolution=0.1,
            blobs=(VegBlob("tree", "rect", rect=(float(rng.uniform(2, 4)), 1.0,
                                                 float(rng.uniform(4.2, 5.5)), 5.0),
                           height=3.0),),
            start=(1.0, 3.0, 0.0), goal=(5.5, 5.5), seed=k,
        )
        world = build_world(spec)
        pose = Pose2D(1.0 + rng.uniform(0, 0.5), 3.0 + rng.uniform(0, 0.5), rng.uniform(-3, 3))
        scan = raycast_scan(world, pose, 0.7, 64, 4.0)
        occ = world.occupancy(0.7)
        for ang, rng_val in zip(scan.angles, scan.ranges):
            steps = np.arange(0.0, 4.0, 0.001)
            xs = pose.x + steps * math.cos(ang)
            ys = pose.y + steps * math.sin(ang)
            ok = (xs >= 0) & (xs < world.extent_x) & (ys >= 0) & (ys < world.extent_y)
            hit = 4.0
            idx = np.nonzero(ok & occ[np.clip((ys / 0.1).astype(int), 0, 59),
                                      np.clip((xs / 0.1).astype(int), 0, 59)])[0]
            if idx.size:
                hit = steps[idx[0]]
            if abs(hit - rng_val) > world.resolution:
                return ("raycast-soundness", False,
                        f"beam at {ang:.3f} rad: got {rng_val:.3f}, probe {hit:.3f}")
    return ("raycast-soundness", True, f"{n_worlds} random worlds")


def check_confidence_monotone(seed: int = 0):
    """Lower distances must map to higher confidence, always in (0, 1]."""
    rng = np.random.default_rng(seed)
    d = np.sort(rng.uniform(0, 1, 1000))
    kappa = np.exp(-2.0 * d)
    ok = bool(np.all(np.diff(kappa) <= 0) and kappa.min() > 0 and kappa.max() <= 1.0)
    return ("confidence-monotone", ok, "1000 sorted distances")


def check_stunting(seed: int = 0):
    """Confidence scaling must shrink the velocity window monotonically and
    leave it untouched at confidence 1."""
    params = PlannerParams()
    base = dynamic_window(0.5, 0.2, params, scale=1.0)
    prev_hi = base.v_hi
    for k in np.linspace(1.0, 0.1, 10):
        win = dynamic_window(0.5, 0.2, params, scale=float(k))
        if win.v_hi > prev_hi + 1e-12 or win.omega_hi > base.omega_hi + 1e-12:
            return ("stunting-monotone", False, f"window grew at scale {k}")
        prev_hi = win.v_hi
    same = dynamic_window(0.5, 0.2, params, scale=1.0)
    ok = (same.v_lo, same.v_hi, same.omega_lo, same.omega_hi) == (
        base.v_lo, base.v_hi, base.omega_lo, base.omega_hi)
    return ("stunting-monotone", ok, "scales 1.0 down to 0.1")


def check_selection_in_window(seed: int = 0):
    """The selected velocity must lie inside the sampled window."""
    rng = np.random.default_rng(seed)
    params = PlannerParams()
    for _ in range(10):
        cmap = CostMap.centered(0.0, 0.0, 41, 0.1)
        occupied = rng.random((41, 41)) < 0.05
        cmap.data[occupied] = 100.0
        cmap.data[20, 20] = 0.0
        sel = select_velocity(Pose2D(0, 0, 0), float(rng.uniform(0, 1)),
                              float(rng.uniform(-1, 1)), cmap,
                              (2.0, float(rng.uniform(-1, 1))), params, 66.0)
        if not sel.frozen and not sel.window.contains(sel.v, sel.omega):
            return ("selection-in-window", False, f"({sel.v}, {sel.omega}) outside window")
    return ("selection-in-window", True, "10 random maps")


ALL_CHECKS = [
    check_clearing_ordering,
    check_gradient,
    check_raycast,
    check_confidence_monotone,
    check_stunting,
    check_selection_in_window,
]


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    return [chk(seed=seed) if "seed" in chk.__code__.co_varnames else chk()
            for chk in ALL_CHECKS]
