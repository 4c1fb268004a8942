"""Vegetation-aware navigation: simulator, cost-map clearing, cautious
dynamic-window planning, recovery behaviors, and a benchmark harness."""

from .world import (
    ConfigurationError,
    EventSet,
    FrameTransform,
    Pose2D,
    RobotState,
    ScanLayer,
    VegClass,
    VelocityCommand,
    WorldGrid,
    build_world,
    collision_check,
    raycast_scan,
    step_dynamics,
)
from .perception import (
    CameraModel,
    NoiseModel,
    QuadrantClassification,
    QuadrantFootprint,
    classify_fewshot,
    classify_oracle,
    dominant_class,
    extract_footprints,
    summarize,
)
from .costmap import (
    MAX_COST,
    ClearingWeights,
    CostMap,
    CostmapConfig,
    apply_clearing,
    build_layer,
    clear_value,
    critical_sum,
    height_measure,
    inflate,
    mark_unsafe,
)
from .planner import (
    AdverseCondition,
    PlannerMode,
    PlannerParams,
    PlannerState,
    SelectResult,
    Trajectory,
    VelocityWindow,
    VARIANTS,
    detect_adverse,
    dynamic_window,
    objective,
    recovery_command,
    record_safe,
    rollout,
    select_recovery_point,
    select_velocity,
)
from .scenario import ScenarioSpec, VegBlob, ScanConfig, bundled_scenarios, load_scenario, save_scenario
from .harness import (
    FewshotBackend,
    MetricsReport,
    Outcome,
    TrialResult,
    compute_metrics,
    derive_seed,
    metrics_from_archive,
    pooled_fpr,
    run_batch,
    run_trial,
)

__version__ = "0.1.0"
