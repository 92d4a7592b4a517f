"""Closed-loop quadrotor landing simulation with predictive control and
barrier-function obstacle avoidance."""

from landersim.cbf import (
    CbfConfig,
    ObstacleSpec,
    barrier_value,
    barrier_values_all,
    cbf_residual,
    decay_envelope,
    min_barrier_value,
)
from landersim.dynamics import (
    QuadrotorParams,
    SimulationFault,
    derivative,
    euler_step,
    ground_effect_multiplier,
    hover_control,
    hover_state,
    make_state,
    rk4_step,
)
from landersim.harness import (
    BatchReport,
    ScenarioConfig,
    ScenarioError,
    TrialResult,
    batch_report,
    builtin_scenario_names,
    final_point_error,
    load_scenario,
    render_table,
    run_batch,
    run_trials,
    trial_result,
)
from landersim.ocp import (
    DecisionVector,
    GradientCheckReport,
    NmpcConfig,
    NmpcSolver,
    OcpSolution,
    ReferencePlan,
    SolverDiverged,
    WarmStart,
    constraint_eval,
    gradient_check,
    shift_warm_start,
    total_cost,
)
from landersim.platform import (
    LandingPhase,
    PhaseThresholds,
    PhaseTracker,
    PlatformModel,
    build_reference_plan,
    descent_reference,
    phase_sequence_matches,
    platform_state_at,
    update_phase,
)
from landersim.sim import (
    NOISE_PRESETS,
    NoiseSigmas,
    TrialLog,
    add_state_noise,
    noise_preset,
    perturb_initial_state,
    run_closed_loop,
)

__all__ = [
    "BatchReport",
    "CbfConfig",
    "DecisionVector",
    "GradientCheckReport",
    "LandingPhase",
    "NOISE_PRESETS",
    "NmpcConfig",
    "NmpcSolver",
    "NoiseSigmas",
    "ObstacleSpec",
    "OcpSolution",
    "PhaseThresholds",
    "PhaseTracker",
    "PlatformModel",
    "QuadrotorParams",
    "ReferencePlan",
    "ScenarioConfig",
    "ScenarioError",
    "SimulationFault",
    "SolverDiverged",
    "TrialLog",
    "TrialResult",
    "WarmStart",
    "add_state_noise",
    "barrier_value",
    "barrier_values_all",
    "batch_report",
    "build_reference_plan",
    "builtin_scenario_names",
    "cbf_residual",
    "constraint_eval",
    "decay_envelope",
    "derivative",
    "descent_reference",
    "euler_step",
    "final_point_error",
    "gradient_check",
    "ground_effect_multiplier",
    "hover_control",
    "hover_state",
    "load_scenario",
    "make_state",
    "min_barrier_value",
    "noise_preset",
    "perturb_initial_state",
    "phase_sequence_matches",
    "platform_state_at",
    "render_table",
    "rk4_step",
    "run_batch",
    "run_closed_loop",
    "run_trials",
    "shift_warm_start",
    "total_cost",
    "trial_result",
    "update_phase",
]

__version__ = "0.1.0"
