"""Out-of-sample Monte-Carlo validation of solved control trajectories.

Fresh scenarios are drawn from a validation stream (distinct stream_id),
rolled out under the fixed controls, and reduced to per-scenario worst-case
constraint values Z_i = max over (node, constraint) of G. The report carries
the violation rate, empirical V@R/AV@R of Z at the configured level, and the
sample-average cost.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .ocp import (
    ControlTrajectory,
    StateRollout,
    evaluate_constraints,
    evaluate_objective,
    rollout,
)
from .risk import RiskLevel, empirical_avar, empirical_var
from .sampling import RandomSeed
from .scenarios import ScenarioProblem

logger = logging.getLogger(__name__)

_DIVERGED_SURROGATE = np.finfo(np.float64).max


@dataclass(frozen=True)
class ValidationReport:
    n_val: int
    alpha: float
    violation_rate: float
    empirical_var: float
    empirical_avar: float
    mean_cost: float
    worst_case_values: np.ndarray  # (n_val,) per-scenario Z, kept for histograms
    diverged_count: int = 0

    def to_json_dict(self) -> dict:
        return {
            "n_val": self.n_val,
            "alpha": self.alpha,
            "violation_rate": self.violation_rate,
            "empirical_var": self.empirical_var,
            "empirical_avar": self.empirical_avar,
            "mean_cost": self.mean_cost,
            "diverged_count": self.diverged_count,
        }


def monte_carlo_validate(
    scenario: ScenarioProblem,
    controls: ControlTrajectory,
    seed: RandomSeed,
    n_val: int,
    level: RiskLevel,
) -> ValidationReport:
    """Roll out ``n_val`` fresh scenario draws and report risk statistics.

    Deterministic given the seed. Diverged rollouts count as violations with
    the largest finite value as surrogate worst case.
    """
    problem = scenario.problem
    if n_val < 1:
        raise ConfigurationError("n_val must be >= 1")
    u = np.asarray(controls.controls, dtype=float)
    if np.any(u < problem.control_lower - 1e-9) or np.any(u > problem.control_upper + 1e-9):
        raise ConfigurationError("controls violate the control box")

    scen = scenario.sample(seed, n_val)
    roll = rollout(problem, controls, scen, raise_on_divergence=False)
    cons = evaluate_constraints(problem, controls, roll, scen, with_gradients=False)
    k0 = problem.first_constraint_node
    if problem.n_constraints > 0:
        Z = cons.values[:, k0:, :].reshape(n_val, -1)
        Z = np.where(np.isfinite(Z), Z, -np.inf).max(axis=1)
    else:
        Z = np.full(n_val, -np.inf)
    Z = np.where(roll.diverged | ~np.isfinite(Z), _DIVERGED_SURROGATE, Z)
    if roll.diverged.any():
        logger.warning(
            "%d of %d validation rollouts diverged; counted as violations",
            int(roll.diverged.sum()),
            n_val,
        )

    mean_cost = float(np.nan)
    finite = ~roll.diverged
    if finite.any():
        # cost over the non-diverged scenarios only
        sub_roll = StateRollout(
            states=roll.states[finite],
            scenario_ref=roll.scenario_ref,
            diverged=roll.diverged[finite],
            first_divergence_step=roll.first_divergence_step[finite],
        )
        mean_cost, _ = evaluate_objective(problem, controls, sub_roll)

    avar, _ = empirical_avar(Z, level)
    var = empirical_var(Z, level)
    return ValidationReport(
        n_val=n_val,
        alpha=level.alpha,
        violation_rate=float(np.mean(Z > 0.0)),
        empirical_var=float(var),
        empirical_avar=float(avar),
        mean_cost=mean_cost,
        worst_case_values=Z,
        diverged_count=int(roll.diverged.sum()),
    )


def validation_to_json(report: ValidationReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def histogram_to_csv(report: ValidationReport, path) -> None:
    """Raw per-scenario worst-case values, one row per validation scenario."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "worst_case_value"])
        for i, z in enumerate(report.worst_case_values):
            writer.writerow([i, repr(float(z))])
