"""Problem abstraction, multi-scenario rollouts, and control sensitivities.

All dynamics/cost/constraint callbacks are vectorized over scenarios: state
arguments have shape (M, n), parameter arguments (M, q), and a single control
vector (m,) is shared across scenarios (stepwise-constant open-loop control).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, RolloutDivergenceError
from .sampling import ScenarioSet

Array = np.ndarray


@dataclass
class ProblemDefinition:
    """Continuous-time stochastic optimal control problem data.

    Drift ``b(x, u, xi) -> (M, n)`` and diffusion ``sigma(x, u, xi) ->
    (M, n, noise_dim)`` define the controlled SDE; costs, inequality
    constraints G_j (rows of ``constraints``) and the terminal equality H
    complete the problem. Analytic partials are required for everything the
    solver linearizes; diffusion partials may be omitted when the diffusion
    does not depend on state or control.
    """

    n: int
    m: int
    q: int
    horizon: float                  # T, seconds
    nodes: int                      # S control intervals
    control_lower: Array            # (m,)
    control_upper: Array            # (m,)

    drift: Callable                  # (x, u, xi) -> (M, n)
    drift_jac_x: Callable            # (x, u, xi) -> (M, n, n)
    drift_jac_u: Callable            # (x, u, xi) -> (M, n, m)
    diffusion: Callable              # (x, u, xi) -> (M, n, noise_dim)
    diffusion_jac_x: Optional[Callable] = None  # (M, n, noise_dim, n) or None
    diffusion_jac_u: Optional[Callable] = None  # (M, n, noise_dim, m) or None

    running_cost: Callable = None          # (x, u) -> (M,)
    running_cost_grad_x: Callable = None   # (x, u) -> (M, n)
    running_cost_grad_u: Callable = None   # (x, u) -> (M, m)
    terminal_cost: Callable = None         # (x,) -> (M,)
    terminal_cost_grad: Callable = None    # (x,) -> (M, n)

    # constant curvature of the costs, used by the convex cost model;
    # zero when omitted (first-order model plus trust region still applies)
    running_cost_hess_x: Optional[Array] = None   # (n, n)
    running_cost_hess_u: Optional[Array] = None   # (m, m)
    terminal_cost_hess: Optional[Array] = None    # (n, n)

    n_constraints: int = 0
    constraints: Optional[Callable] = None         # (x, xi) -> (M, N)
    constraints_grad_x: Optional[Callable] = None  # (x, xi) -> (M, N, n)
    first_constraint_node: int = 0  # set to 1 when node 0 is control-independent

    n_eq: int = 0
    terminal_eq: Optional[Callable] = None      # (x,) -> (M, n_h)
    terminal_eq_jac: Optional[Callable] = None  # (x,) -> (M, n_h, n)

    noise_dim: Optional[int] = None
    integration_substeps: int = 1   # Euler substeps per control interval

    def __post_init__(self):
        self.control_lower = np.asarray(self.control_lower, dtype=float)
        self.control_upper = np.asarray(self.control_upper, dtype=float)
        if self.horizon <= 0 or self.nodes < 1:
            raise ConfigurationError("horizon must be positive and nodes >= 1")
        if self.control_lower.shape != (self.m,) or self.control_upper.shape != (self.m,):
            raise ConfigurationError("control bounds must have shape (m,)")
        if np.any(self.control_lower > self.control_upper):
            raise ConfigurationError("control bounds require lower <= upper")
        if self.noise_dim is None:
            self.noise_dim = self.n
        if self.integration_substeps < 1:
            raise ConfigurationError("integration_substeps must be >= 1")
        if self.first_constraint_node not in (0, 1):
            raise ConfigurationError("first_constraint_node must be 0 or 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.nodes

    @property
    def total_steps(self) -> int:
        return self.nodes * self.integration_substeps

    @property
    def substep_dt(self) -> float:
        return self.horizon / self.total_steps


@dataclass
class ControlTrajectory:
    """S stepwise-constant control vectors plus the scalar risk variable."""

    controls: Array   # (S, m)
    risk_t: float = 0.0

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        if self.controls.ndim != 2:
            raise ConfigurationError("controls must be a (S, m) array")

    def flat(self) -> Array:
        return self.controls.ravel()


@dataclass
class StateRollout:
    """Sampled state paths on the node grid, one row block per scenario."""

    states: Array           # (M, S+1, n)
    scenario_ref: ScenarioSet
    diverged: Array         # (M,) bool
    first_divergence_step: Array  # (M,) int, -1 when finite throughout

    @property
    def count(self) -> int:
        return self.states.shape[0]


@dataclass
class RolloutSensitivities:
    """Jacobians d x_k / d(u_0..u_{S-1}) per scenario and node."""

    jacobians: Array  # (M, S+1, n, S*m)


def _check_match(problem: ProblemDefinition, controls: ControlTrajectory, scenarios: ScenarioSet):
    S, m = controls.controls.shape
    if S != problem.nodes or m != problem.m:
        raise ConfigurationError(
            f"controls shape {(S, m)} does not match problem ({problem.nodes}, {problem.m})"
        )
    if scenarios.steps != problem.total_steps:
        raise ConfigurationError(
            f"scenario set has {scenarios.steps} steps, problem integrates {problem.total_steps}"
        )
    if scenarios.initial_states.shape[1] != problem.n:
        raise ConfigurationError("scenario state dimension does not match problem")
    if scenarios.brownian_increments.shape[2] != problem.noise_dim:
        raise ConfigurationError("scenario noise dimension does not match problem")
    if scenarios.parameters.shape[1] != problem.q:
        raise ConfigurationError("scenario parameter dimension does not match problem")
    if abs(scenarios.dt - problem.substep_dt) > 1e-12 * max(1.0, problem.substep_dt):
        raise ConfigurationError(
            f"scenario dt {scenarios.dt} does not match integration step {problem.substep_dt}"
        )


def rollout(
    problem: ProblemDefinition,
    controls: ControlTrajectory,
    scenarios: ScenarioSet,
    raise_on_divergence: bool = True,
) -> StateRollout:
    """Euler-Maruyama integration of all scenarios under the given controls.

    x_{k+1} = x_k + b(x_k, u_k, xi) dt + sigma(x_k, u_k, xi) dW_k, from the
    sampled initial states. Non-finite states raise (or are flagged when
    ``raise_on_divergence`` is false; flagged rows carry NaNs onward).
    """
    _check_match(problem, controls, scenarios)
    M = scenarios.count
    sub = problem.integration_substeps
    dt = problem.substep_dt
    xi = scenarios.parameters
    dW = scenarios.brownian_increments

    states = np.empty((M, problem.nodes + 1, problem.n))
    states[:, 0] = scenarios.initial_states
    first_bad = np.full(M, -1, dtype=int)

    x = scenarios.initial_states.copy()
    for ks in range(problem.total_steps):
        u_k = controls.controls[ks // sub]
        x = (
            x
            + problem.drift(x, u_k, xi) * dt
            + np.einsum("mnd,md->mn", problem.diffusion(x, u_k, xi), dW[:, ks])
        )
        bad = ~np.all(np.isfinite(x), axis=1)
        newly = bad & (first_bad < 0)
        first_bad[newly] = ks
        if (ks + 1) % sub == 0:
            states[:, (ks + 1) // sub] = x

    diverged = first_bad >= 0
    if raise_on_divergence and diverged.any():
        i = int(np.argmax(diverged))
        raise RolloutDivergenceError(i, int(first_bad[i]))
    return StateRollout(
        states=states,
        scenario_ref=scenarios,
        diverged=diverged,
        first_divergence_step=first_bad,
    )


def _substep_states(problem, controls, scenarios, roll):
    """Yield (step_index, x_before_step) at substep resolution."""
    sub = problem.integration_substeps
    if sub == 1:
        for ks in range(problem.nodes):
            yield ks, roll.states[:, ks]
        return
    dt = problem.substep_dt
    xi = scenarios.parameters
    dW = scenarios.brownian_increments
    x = scenarios.initial_states.copy()
    for ks in range(problem.total_steps):
        yield ks, x
        u_k = controls.controls[ks // sub]
        x = (
            x
            + problem.drift(x, u_k, xi) * dt
            + np.einsum("mnd,md->mn", problem.diffusion(x, u_k, xi), dW[:, ks])
        )


def rollout_sensitivities(
    problem: ProblemDefinition,
    controls: ControlTrajectory,
    scenarios: ScenarioSet,
    roll: StateRollout,
) -> RolloutSensitivities:
    """Forward chain rule through the Euler-Maruyama recursion.

    J_{k+1} = (I + db/dx dt + sum_c dsigma_c/dx dW_c) J_k, plus the direct
    block db/du dt + sum_c dsigma_c/du dW_c in the column of the active
    control. J_0 = 0, and columns of controls not yet applied stay zero.
    """
    _check_match(problem, controls, scenarios)
    M = scenarios.count
    sub = problem.integration_substeps
    dt = problem.substep_dt
    n, m, S = problem.n, problem.m, problem.nodes
    xi = scenarios.parameters
    dW = scenarios.brownian_increments
    eye = np.eye(n)

    jac = np.zeros((M, S + 1, n, S * m))
    J = np.zeros((M, n, S * m))
    for ks, x in _substep_states(problem, controls, scenarios, roll):
        s = ks // sub
        u_k = controls.controls[s]
        A = eye + problem.drift_jac_x(x, u_k, xi) * dt
        if problem.diffusion_jac_x is not None:
            A = A + np.einsum("mrdx,md->mrx", problem.diffusion_jac_x(x, u_k, xi), dW[:, ks])
        B = problem.drift_jac_u(x, u_k, xi) * dt
        if problem.diffusion_jac_u is not None:
            B = B + np.einsum("mrdu,md->mru", problem.diffusion_jac_u(x, u_k, xi), dW[:, ks])
        J = A @ J
        J[:, :, s * m : (s + 1) * m] += B
        if (ks + 1) % sub == 0:
            jac[:, (ks + 1) // sub] = J
    return RolloutSensitivities(jacobians=jac)


def evaluate_objective(
    problem: ProblemDefinition,
    controls: ControlTrajectory,
    roll: StateRollout,
    sensitivities: Optional[RolloutSensitivities] = None,
):
    """Sample-average discretized cost; exact control gradient when
    sensitivities are supplied (otherwise the gradient is None)."""
    M = roll.count
    dt = problem.dt
    u = controls.controls
    total = np.zeros(M)
    grad = np.zeros(problem.nodes * problem.m) if sensitivities is not None else None

    for k in range(problem.nodes):
        x_k = roll.states[:, k]
        if problem.running_cost is not None:
            total += problem.running_cost(x_k, u[k]) * dt
            if grad is not None:
                gx = problem.running_cost_grad_x(x_k, u[k])           # (M, n)
                J_k = sensitivities.jacobians[:, k]                   # (M, n, S*m)
                grad += np.einsum("mn,mnz->z", gx, J_k) * (dt / M)
                gu = problem.running_cost_grad_u(x_k, u[k]).mean(axis=0)
                grad[k * problem.m : (k + 1) * problem.m] += gu * dt
    x_S = roll.states[:, problem.nodes]
    if problem.terminal_cost is not None:
        total += problem.terminal_cost(x_S)
        if grad is not None:
            gphi = problem.terminal_cost_grad(x_S)
            grad += np.einsum("mn,mnz->z", gphi, sensitivities.jacobians[:, problem.nodes]) / M
    return float(total.mean()), grad


@dataclass
class ConstraintEvaluation:
    """Raw inequality values/gradients and the mean terminal equality."""

    values: Array                       # (M, S+1, N)
    grads_x: Optional[Array]            # (M, S+1, N, n) or None
    eq_mean: Array                      # (n_h,)
    eq_mean_jac: Optional[Array]        # (n_h, S*m) or None


def evaluate_constraints(
    problem: ProblemDefinition,
    controls: ControlTrajectory,
    roll: StateRollout,
    scenarios: ScenarioSet,
    sensitivities: Optional[RolloutSensitivities] = None,
    with_gradients: bool = True,
) -> ConstraintEvaluation:
    """Evaluate G at every (scenario, node) and the sample-mean terminal H.

    No max is taken here; the solver owns the epigraph assembly. The mean
    equality Jacobian w.r.t. controls is returned when sensitivities are
    supplied.
    """
    _check_match(problem, controls, scenarios)
    M = roll.count
    S, N = problem.nodes, problem.n_constraints
    xi = scenarios.parameters

    values = np.zeros((M, S + 1, N))
    grads = np.zeros((M, S + 1, N, problem.n)) if (with_gradients and N > 0) else None
    if N > 0:
        for k in range(S + 1):
            values[:, k] = problem.constraints(roll.states[:, k], xi)
            if grads is not None:
                grads[:, k] = problem.constraints_grad_x(roll.states[:, k], xi)

    x_S = roll.states[:, S]
    if problem.n_eq > 0:
        eq_mean = problem.terminal_eq(x_S).mean(axis=0)
        eq_jac = None
        if sensitivities is not None:
            Hx = problem.terminal_eq_jac(x_S)                       # (M, n_h, n)
            eq_jac = np.einsum("mhn,mnz->hz", Hx, sensitivities.jacobians[:, S]) / M
    else:
        eq_mean = np.zeros(0)
        eq_jac = np.zeros((0, S * problem.m)) if sensitivities is not None else None
    return ConstraintEvaluation(values=values, grads_x=grads, eq_mean=eq_mean, eq_mean_jac=eq_jac)


def rollout_to_csv(roll: StateRollout, path) -> None:
    """One row per (scenario_id, step): scenario_id, step, x_0..x_{n-1}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    M, K, n = roll.states.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "step"] + [f"x_{c}" for c in range(n)])
        for i in range(M):
            for k in range(K):
                writer.writerow([i, k] + [repr(float(v)) for v in roll.states[i, k]])
