"""Multi-robot multi-target encirclement laboratory."""

from .evader import ApfConfig, apf_direction
from .harness import (
    Metrics,
    ScenarioSpec,
    TrialRecord,
    evaluate,
    export_results,
    run_episode,
    scenario_catalog,
)
from .perception import ObservationBundle, assemble_observation
from .policy import Policy, PolicyConfig, build_policy, load_policy, save_policy
from .rewards import RewardBreakdown, step_rewards
from .training import CurriculumStage, TrainConfig, curriculum_stage_at, run_training
from .world import (
    Obstacle,
    RobotState,
    StepEvents,
    Vortex,
    WorldConfig,
    WorldState,
    check_termination,
    init_episode,
    is_encircled,
    step,
)

__all__ = [
    "ApfConfig",
    "CurriculumStage",
    "Metrics",
    "ObservationBundle",
    "Obstacle",
    "Policy",
    "PolicyConfig",
    "RewardBreakdown",
    "RobotState",
    "ScenarioSpec",
    "StepEvents",
    "TrainConfig",
    "TrialRecord",
    "Vortex",
    "WorldConfig",
    "WorldState",
    "apf_direction",
    "assemble_observation",
    "build_policy",
    "check_termination",
    "curriculum_stage_at",
    "evaluate",
    "export_results",
    "init_episode",
    "is_encircled",
    "load_policy",
    "run_episode",
    "run_training",
    "save_policy",
    "scenario_catalog",
    "step",
    "step_rewards",
]

__version__ = "0.1.0"
