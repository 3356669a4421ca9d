"""Risk-averse trajectory optimization via scenario sampling and SCP."""

from .errors import ConfigurationError, RolloutDivergenceError
from .ocp import (
    ControlTrajectory,
    ProblemDefinition,
    RolloutSensitivities,
    StateRollout,
    evaluate_constraints,
    evaluate_objective,
    rollout,
    rollout_sensitivities,
)
from .risk import RiskLevel, empirical_avar, empirical_var, epigraph_residuals
from .sampling import (
    Fixed,
    GaussianVector,
    RandomFieldSpec,
    RandomSeed,
    ScenarioSet,
    UniformBox,
    sample_rff_field,
    sample_scenarios,
)
from .scenarios import (
    DroneScenarioConfig,
    DrivingScenarioConfig,
    Ellipsoid,
    ObstacleSet,
    ScenarioProblem,
    Sphere,
    build_driving_problem,
    build_drone_problem,
)
from .solver import (
    ConvexSubproblem,
    SCPConfig,
    SolveReport,
    build_subproblem,
    delta_m_schedule,
    solve_socp,
    solve_subproblem,
)

__all__ = [
    "ConfigurationError",
    "RolloutDivergenceError",
    "ControlTrajectory",
    "ProblemDefinition",
    "RolloutSensitivities",
    "StateRollout",
    "evaluate_constraints",
    "evaluate_objective",
    "rollout",
    "rollout_sensitivities",
    "RiskLevel",
    "empirical_avar",
    "empirical_var",
    "epigraph_residuals",
    "Fixed",
    "GaussianVector",
    "RandomFieldSpec",
    "RandomSeed",
    "ScenarioSet",
    "UniformBox",
    "sample_rff_field",
    "sample_scenarios",
    "DroneScenarioConfig",
    "DrivingScenarioConfig",
    "Ellipsoid",
    "ObstacleSet",
    "ScenarioProblem",
    "Sphere",
    "build_driving_problem",
    "build_drone_problem",
    "ConvexSubproblem",
    "SCPConfig",
    "SolveReport",
    "build_subproblem",
    "delta_m_schedule",
    "solve_socp",
    "solve_subproblem",
]

__version__ = "0.1.0"
