"""Agility-enhanced power supply: demand prediction, hybrid power split,
and power-aware flight planning on a desk-scale patrol benchmark."""

from .trajectory import (
    InvalidTrajectoryError,
    Trajectory,
    TrajectoryFeatures,
    Waypoint,
    arc_length,
    curvature_series,
    features,
    per_second_average,
    resample,
    speed_series,
)
from .powermodel import (
    DEMAND_PRESETS,
    BaselineParams,
    DemandParams,
    DemandProfile,
    baseline_power,
    demand_profile,
    instant_demand,
)
from .plant import (
    BATTERY,
    DEFAULT_SPECS,
    FUEL_CELL,
    ULTRACAP,
    AllocationDecision,
    PlantSpecs,
    PlantState,
    SourceSpec,
    allocate,
    available_surge,
    precharge,
    step,
)
from .predictor import (
    DEFAULT_ARCH,
    FeatureVector,
    LabeledDataset,
    MLPModel,
    Predictor,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    generate_dataset,
    load_model,
    mae,
    plan_features,
    save_model,
    split_dataset,
    train,
    train_predictor,
)
from .planner import (
    DEFAULT_ENVELOPE,
    AmendedPlan,
    ConflictPrediction,
    Envelope,
    ObstacleSnapshot,
    PlanParams,
    PlanningInfeasibleError,
    aggressiveness,
    enforce_envelope,
    plan_initial,
    predict_conflict,
    replan_avoid,
)
from .world import (
    GRAVITY,
    MODES,
    InvalidScenarioError,
    MissionSettings,
    ObstacleSpec,
    ScenarioConfig,
    SimulationTrace,
    UAVState,
    World,
    generate_scenario,
    run_mission,
    spawn_scenario,
)
from .metrics import (
    REFERENCE_VALUES,
    AgilityReport,
    BenchmarkReport,
    agility_report,
    compare,
    complexity_from_curvature,
    complexity_score,
    mae_report,
    power_term,
    safety_score,
    write_durations,
    write_fig5_mae,
    write_fig7_power,
)

__version__ = "0.1.0"
