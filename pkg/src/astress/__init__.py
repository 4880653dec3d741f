"""Stress-testing MDP solvers for finding likely failures of black-box simulators."""

from .actions import ACTION_DIM, ActionModel, EnvironmentAction, mahalanobis
from .config import EVAL_SOLVERS, ExperimentConfig, default_config_text, load_config, parse_config
from .crosswalk import (
    IC_FIELDS,
    IC_HIGH,
    IC_LOW,
    STATE_SCALES,
    CrosswalkSim,
    InitialCondition,
    ScenarioConfig,
    SimState,
    StepResult,
)
from .harness import (
    AggregateReport,
    Bin,
    BinGrid,
    BinResult,
    ExperimentResult,
    SolverSummary,
    batch_view,
    derive_bin_seeds,
    emit_results,
    evaluate_bin,
    evaluate_policy,
    integrity_errors,
    load_report,
    report_text,
    run_experiment,
    sequential_view,
    solver_for_policy,
    summarize,
)
from .mcts import (
    DiscreteActionSource,
    GaussianActionSource,
    MctsConfig,
    MctsResult,
    search,
    select_action,
    should_widen,
)
from .policy import (
    Checkpoint,
    LstmPolicy,
    MlpPolicy,
    fisher_vector_product,
    gaussian_kl,
    gaussian_log_prob,
    load_policy,
    make_policy,
    save_policy,
)
from .records import (
    read_csv,
    read_records,
    replay_inputs,
    trajectory_record,
    verify_record,
    write_csv,
    write_records,
)
from .reward import RewardSpec, step_reward
from .simulation import (
    AstProblem,
    SimulationError,
    Trajectory,
    mean_controller,
    sampling_controller,
    sequence_controller,
)
from .training import (
    SOLVERS,
    LinearBaseline,
    TrainConfig,
    TrainResult,
    collect_batch,
    conjugate_gradient,
    gae_advantages,
    make_solver_policy,
    normalize_advantages,
    resume_point,
    run_episode,
    train,
    trust_region_update,
)

__version__ = "0.1.0"

__all__ = [
    "ACTION_DIM",
    "ActionModel",
    "AggregateReport",
    "AstProblem",
    "Bin",
    "BinGrid",
    "BinResult",
    "Checkpoint",
    "CrosswalkSim",
    "DiscreteActionSource",
    "EVAL_SOLVERS",
    "EnvironmentAction",
    "ExperimentConfig",
    "ExperimentResult",
    "GaussianActionSource",
    "IC_FIELDS",
    "IC_HIGH",
    "IC_LOW",
    "InitialCondition",
    "LinearBaseline",
    "LstmPolicy",
    "MctsConfig",
    "MctsResult",
    "MlpPolicy",
    "RewardSpec",
    "SOLVERS",
    "STATE_SCALES",
    "ScenarioConfig",
    "SimState",
    "SimulationError",
    "SolverSummary",
    "StepResult",
    "TrainConfig",
    "TrainResult",
    "Trajectory",
    "batch_view",
    "collect_batch",
    "conjugate_gradient",
    "default_config_text",
    "derive_bin_seeds",
    "emit_results",
    "evaluate_bin",
    "evaluate_policy",
    "fisher_vector_product",
    "gae_advantages",
    "gaussian_kl",
    "gaussian_log_prob",
    "integrity_errors",
    "load_config",
    "load_policy",
    "load_report",
    "mahalanobis",
    "make_policy",
    "make_solver_policy",
    "mean_controller",
    "normalize_advantages",
    "parse_config",
    "read_csv",
    "read_records",
    "replay_inputs",
    "report_text",
    "resume_point",
    "run_episode",
    "run_experiment",
    "sampling_controller",
    "save_policy",
    "search",
    "select_action",
    "sequence_controller",
    "sequential_view",
    "should_widen",
    "solver_for_policy",
    "step_reward",
    "summarize",
    "train",
    "trajectory_record",
    "trust_region_update",
    "verify_record",
    "write_csv",
    "write_records",
]
