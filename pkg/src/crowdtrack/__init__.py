"""Realtime crowd tracking: adaptive per-pedestrian particle filters on top
of a reciprocal-velocity-obstacle motion model, with ensemble-Kalman motion
parameter learning and a variant-comparison benchmark harness."""

from .adapt import (
    BudgetController,
    BudgetUpdate,
    motion_model_reliability,
    propagation_reliability,
    update_budget,
)
from .bench import BenchReport, VARIANTS, accuracy, compare_variants, run_benchmark, variant_config
from .geometry import HalfPlane, Vec2, solve_lp2, solve_lp3
from .learn import (
    Ensemble,
    EnkfLearner,
    LearnConfig,
    MotionParams,
    em_update,
    enkf_predict,
    enkf_update,
    predict_t_rvo,
    train,
)
from .rvo import (
    AgentState,
    Crowd,
    RvoConfig,
    compute_new_velocity,
    compute_orca_halfplane,
    select_neighbors,
    step,
)
from .scenario import (
    ObsEntry,
    ObservationFrame,
    ObsModel,
    Scenario,
    generate_scenario,
    load_scenario,
    observe,
    observe_all,
    save_scenario,
    simulate_ground_truth,
)
from .tracker import (
    MultiTracker,
    Particle,
    ParticleSet,
    TrackerConfig,
    estimate,
    predict,
    resample,
    weight_update,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "BenchReport",
    "BudgetController",
    "BudgetUpdate",
    "Crowd",
    "Ensemble",
    "EnkfLearner",
    "HalfPlane",
    "LearnConfig",
    "MotionParams",
    "MultiTracker",
    "ObsEntry",
    "ObsModel",
    "ObservationFrame",
    "Particle",
    "ParticleSet",
    "RvoConfig",
    "Scenario",
    "TrackerConfig",
    "VARIANTS",
    "accuracy",
    "compare_variants",
    "compute_new_velocity",
    "compute_orca_halfplane",
    "em_update",
    "enkf_predict",
    "enkf_update",
    "estimate",
    "generate_scenario",
    "load_scenario",
    "motion_model_reliability",
    "observe",
    "observe_all",
    "predict",
    "predict_t_rvo",
    "propagation_reliability",
    "resample",
    "run_benchmark",
    "save_scenario",
    "select_neighbors",
    "simulate_ground_truth",
    "solve_lp2",
    "solve_lp3",
    "step",
    "train",
    "update_budget",
    "variant_config",
    "weight_update",
]
