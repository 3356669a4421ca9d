"""Sequential convex programming for the sampled risk-constrained problem.

Each iteration linearizes the scenario rollouts around the current controls,
assembles a sparse convex QP over (du, t, y, slacks), solves it, and applies
the step under a trust region. The risk constraint enters in epigraph form:
one shared budget row (M alpha) t + sum_i y_i <= 0 plus one row per
(scenario, node, constraint) G_lin - t <= y_i, y_i >= 0. Slack variables
with a large linear penalty keep the terminal-equality interval and the
budget row feasible far from the feasible set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp

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
from .risk import RiskLevel, empirical_avar, empirical_var
from .sampling import ScenarioSet

_TINY_REG = 1e-9  # curvature on t, y, slacks: keeps the QP solution unique


@dataclass
class SCPConfig:
    """Knobs of the SCP loop.

    ``risk_constraint_warmup`` iterations run without the epigraph rows so a
    zero initial guess can first reach the goal region. ``delta_m`` pads the
    sample-mean terminal equality; ``epsilon_margin`` tightens the risk
    budget row to <= -(M alpha) epsilon.
    """

    max_iterations: int = 10
    convergence_tol: float = 0.01        # relative L2 change of the controls
    trust_region_weight: float = 0.05    # quadratic penalty on ||du||^2
    trust_region_radius: float = 3.0     # per-component box on du
    risk_constraint_warmup: int = 2
    delta_m: float = 1e-3
    epsilon_margin: float = 0.0
    subproblem_tol: float = 1e-3
    slack_penalty: float = 300.0
    adaptive_trust_region: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.convergence_tol <= 0 or self.subproblem_tol <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.trust_region_weight <= 0 or self.trust_region_radius <= 0:
            raise ConfigurationError("trust region weight and radius must be positive")
        if not (0 <= self.risk_constraint_warmup < self.max_iterations):
            raise ConfigurationError("warmup must satisfy 0 <= warmup < max_iterations")
        if self.delta_m < 0 or self.epsilon_margin < 0:
            raise ConfigurationError("delta_m and epsilon_margin must be >= 0")
        if self.slack_penalty <= 0:
            raise ConfigurationError("slack_penalty must be positive")


def delta_m_schedule(C: float, epsilon: float, M: int) -> float:
    """Terminal padding C * M^(epsilon - 1/2) for C > 0, epsilon in (0, 1/2)."""
    if C <= 0 or not (0 < epsilon < 0.5):
        raise ConfigurationError("schedule requires C > 0 and epsilon in (0, 1/2)")
    return C * M ** (epsilon - 0.5)


@dataclass
class ConvexSubproblem:
    """One convexified subproblem: min 1/2 z'Pz + q'z s.t. l <= Az <= u.

    Decision vector z = [du (S*m) | t | y (M) | s_lo (n_h) | s_hi (n_h) |
    s_agg]. Row blocks, in order: du box, y >= 0, slacks >= 0, terminal
    upper/lower, pointwise epigraph rows, aggregate budget row.
    """

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    n_controls: int
    n_scenarios: int
    n_eq: int
    rows_epigraph: slice
    row_aggregate: Optional[int]

    @property
    def col_t(self) -> int:
        return self.n_controls

    @property
    def col_y(self) -> slice:
        return slice(self.n_controls + 1, self.n_controls + 1 + self.n_scenarios)

    @property
    def n_epigraph_rows(self) -> int:
        return self.rows_epigraph.stop - self.rows_epigraph.start

    def upper_violations(self, z: np.ndarray) -> np.ndarray:
        """A z - u, positive where a row's upper bound is violated."""
        return self.A @ z - self.u


@dataclass
class IterationStats:
    index: int
    objective: float
    max_epigraph_slack: float
    trust_radius: float
    control_change: float
    qp_status: str
    wall_time: float


@dataclass
class SolveReport:
    method: str
    converged: bool
    iterations: list
    controls: Optional[ControlTrajectory]
    final_rollout: Optional[StateRollout]
    objective: float
    insample_var: float
    insample_avar: float
    alpha: float
    failure: Optional[str] = None

    def to_json_dict(self) -> dict:
        """Deterministic JSON payload (timing lives in a separate artifact)."""
        return {
            "method": self.method,
            "converged": self.converged,
            "alpha": self.alpha,
            "objective": self.objective,
            "insample_var": self.insample_var,
            "insample_avar": self.insample_avar,
            "failure": self.failure,
            "risk_t": None if self.controls is None else self.controls.risk_t,
            "controls": None if self.controls is None else self.controls.controls.tolist(),
            "iterations": [
                {
                    "index": it.index,
                    "objective": it.objective,
                    "max_epigraph_slack": it.max_epigraph_slack,
                    "trust_radius": it.trust_radius,
                    "control_change": it.control_change,
                    "qp_status": it.qp_status,
                }
                for it in self.iterations
            ],
        }

    def iteration_times(self) -> list:
        return [it.wall_time for it in self.iterations]


def solve_report_to_json(report: SolveReport, path) -> None:
    """Write the deterministic JSON document (iteration table + controls)."""
    import json
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def controls_to_csv(controls: ControlTrajectory, path) -> None:
    """One row per step: step, u_0..u_{m-1}."""
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = controls.controls.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"u_{c}" for c in range(m)])
        for k, row in enumerate(controls.controls):
            writer.writerow([k] + [repr(float(v)) for v in row])


def _cost_model(problem: ProblemDefinition, sens: RolloutSensitivities) -> np.ndarray:
    """Constant-curvature model of the sampled cost in du (without trust term)."""
    S, m = problem.nodes, problem.m
    nu = S * m
    H = np.zeros((nu, nu))
    J = sens.jacobians
    M = J.shape[0]
    dt = problem.dt
    if problem.running_cost_hess_u is not None:
        Hu = np.asarray(problem.running_cost_hess_u, dtype=float) * dt
        for k in range(S):
            H[k * m : (k + 1) * m, k * m : (k + 1) * m] += Hu
    if problem.running_cost_hess_x is not None:
        Hx = np.asarray(problem.running_cost_hess_x, dtype=float)
        for k in range(S):
            Jk = J[:, k]  # (M, n, nu)
            H += np.einsum("mnz,nr,mrw->zw", Jk, Hx, Jk) * (dt / M)
    if problem.terminal_cost_hess is not None:
        Hphi = np.asarray(problem.terminal_cost_hess, dtype=float)
        JS = J[:, S]
        H += np.einsum("mnz,nr,mrw->zw", JS, Hphi, JS) / M
    return H


def build_subproblem(
    problem: ProblemDefinition,
    scenarios: ScenarioSet,
    level: RiskLevel,
    config: SCPConfig,
    current: ControlTrajectory,
    roll: StateRollout,
    sens: RolloutSensitivities,
    risk_rows: bool = True,
    trust_radius: Optional[float] = None,
) -> ConvexSubproblem:
    """Assemble the convex QP around the current iterate.

    With ``risk_rows`` false (warmup) the epigraph rows and budget row are
    omitted entirely.
    """
    M = scenarios.count
    S, m, n_h = problem.nodes, problem.m, problem.n_eq
    nu = S * m
    N = problem.n_constraints
    k0 = problem.first_constraint_node
    radius = config.trust_region_radius if trust_radius is None else trust_radius
    dim = nu + 1 + M + 2 * n_h + 1
    col_t = nu
    col_y = nu + 1
    col_slo = nu + 1 + M
    col_shi = col_slo + n_h
    col_sagg = col_shi + n_h

    _, grad = evaluate_objective(problem, current, roll, sens)
    cons = evaluate_constraints(problem, current, roll, scenarios, sens, with_gradients=True)

    # objective: cost model + trust penalty on du, tiny curvature elsewhere
    P = np.zeros((dim, dim))
    P[:nu, :nu] = _cost_model(problem, sens)
    P[:nu, :nu] += 2.0 * config.trust_region_weight * np.eye(nu)
    P[np.arange(nu, dim), np.arange(nu, dim)] = _TINY_REG
    q = np.zeros(dim)
    q[:nu] = grad
    q[col_slo:dim] = config.slack_penalty

    rows_A, rows_l, rows_u = [], [], []

    def add_rows(mat, lo, hi):
        rows_A.append(mat)
        rows_l.append(np.atleast_1d(lo))
        rows_u.append(np.atleast_1d(hi))

    # du box: control bounds intersected with the trust region
    u_flat = current.controls.ravel()
    lower = np.tile(problem.control_lower, S) - u_flat
    upper = np.tile(problem.control_upper, S) - u_flat
    box = sp.hstack([sp.identity(nu, format="csr"), sp.csr_matrix((nu, dim - nu))])
    add_rows(box, np.maximum(lower, -radius), np.minimum(upper, radius))

    # y >= 0
    eye_y = sp.identity(M, format="csr")
    add_rows(
        sp.hstack([sp.csr_matrix((M, col_y)), eye_y, sp.csr_matrix((M, dim - col_y - M))]),
        np.zeros(M),
        np.full(M, np.inf),
    )

    # slacks >= 0
    ns = 2 * n_h + 1
    add_rows(
        sp.hstack([sp.csr_matrix((ns, col_slo)), sp.identity(ns, format="csr")]),
        np.zeros(ns),
        np.full(ns, np.inf),
    )

    # terminal equality interval, slack-relaxed:
    #   -delta - s_lo <= h + J_h du <= delta + s_hi
    if n_h > 0:
        Jh = cons.eq_mean_jac
        h = cons.eq_mean
        up = sp.hstack(
            [
                sp.csr_matrix(Jh),
                sp.csr_matrix((n_h, 1 + M + n_h)),
                -sp.identity(n_h, format="csr"),
                sp.csr_matrix((n_h, 1)),
            ]
        )
        add_rows(up, np.full(n_h, -np.inf), config.delta_m - h)
        low = sp.hstack(
            [
                sp.csr_matrix(Jh),
                sp.csr_matrix((n_h, 1 + M)),
                sp.identity(n_h, format="csr"),
                sp.csr_matrix((n_h, 2 * n_h + 1 - n_h)),
            ]
        )
        add_rows(low, -config.delta_m - h, np.full(n_h, np.inf))

    n_fixed = nu + M + ns + 2 * n_h
    epi_start = n_fixed
    n_epi = 0
    row_aggregate = None
    if risk_rows and N > 0:
        J = sens.jacobians
        data_parts, row_parts, col_parts, ubound_parts = [], [], [], []
        row = 0
        for k in range(k0, S + 1):
            # rows (i-major, j-minor): grad(G) J du - t - y_i <= -G;
            # controls with s >= k have zero columns by causality
            nrows = M * N
            ncols = min(k, S) * m
            rows_k = row + np.arange(nrows)
            if ncols > 0:
                coef = np.einsum("mjn,mnz->mjz", cons.grads_x[:, k], J[:, k, :, :ncols])
                data_parts.append(coef.reshape(nrows * ncols))
                row_parts.append(np.repeat(rows_k, ncols))
                col_parts.append(np.tile(np.arange(ncols), nrows))
            data_parts.append(np.full(nrows, -1.0))
            row_parts.append(rows_k)
            col_parts.append(np.full(nrows, col_t))
            data_parts.append(np.full(nrows, -1.0))
            row_parts.append(rows_k)
            col_parts.append(col_y + np.repeat(np.arange(M), N))
            ubound_parts.append(-cons.values[:, k, :].reshape(nrows))
            row += nrows
        n_epi = row
        epi = sp.csr_matrix(
            (
                np.concatenate(data_parts),
                (np.concatenate(row_parts), np.concatenate(col_parts)),
            ),
            shape=(n_epi, dim),
        )
        add_rows(epi, np.full(n_epi, -np.inf), np.concatenate(ubound_parts))

        # budget row: (M alpha) t + sum(y) - s_agg <= -(M alpha) epsilon
        agg = np.zeros(dim)
        agg[col_t] = M * level.alpha
        agg[col_y : col_y + M] = 1.0
        agg[col_sagg] = -1.0
        add_rows(sp.csr_matrix(agg), -np.inf, -M * level.alpha * config.epsilon_margin)
        row_aggregate = epi_start + n_epi

    A = sp.vstack(rows_A, format="csc")
    return ConvexSubproblem(
        P=sp.csc_matrix(sp.triu(P)),
        q=q,
        A=A,
        l=np.concatenate(rows_l),
        u=np.concatenate(rows_u),
        n_controls=nu,
        n_scenarios=M,
        n_eq=n_h,
        rows_epigraph=slice(epi_start, epi_start + n_epi),
        row_aggregate=row_aggregate,
    )


def solve_subproblem(sub: ConvexSubproblem, tol: float) -> tuple[np.ndarray, str]:
    """Solve the QP; returns (solution, status) with status one of
    'optimal' | 'max-iter' | 'infeasible'. Infeasibility is a value here,
    not an exception."""
    # one-sided cone form: finite upper rows as A z <= u, finite lower rows
    # negated; infinite bounds drop out
    A = sub.A.tocsr()
    finite_u = np.isfinite(sub.u)
    finite_l = np.isfinite(sub.l)
    G = sp.vstack([A[finite_u], -A[finite_l]], format="csc")
    h = np.concatenate([sub.u[finite_u], -sub.l[finite_l]])

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    solver = clarabel.DefaultSolver(
        sub.P, sub.q, G, h, [clarabel.NonnegativeConeT(G.shape[0])], settings
    )
    res = solver.solve()
    status = str(res.status)
    if status in ("Solved", "SolverStatus.Solved"):
        return np.asarray(res.x), "optimal"
    if "Infeasible" in status:
        return np.zeros(sub.q.size), "infeasible"
    x = np.asarray(res.x)
    if x.size != sub.q.size or not np.all(np.isfinite(x)):
        x = np.zeros(sub.q.size)
    return x, "max-iter"


def _feasibility_stats(problem, controls, roll, scenarios, level, epsilon):
    """In-sample worst-case values and the epigraph slack of the iterate."""
    if problem.n_constraints == 0:
        return np.zeros(0), 0.0, 0.0, 0.0
    cons = evaluate_constraints(problem, controls, roll, scenarios, with_gradients=False)
    k0 = problem.first_constraint_node
    Z = cons.values[:, k0:, :].reshape(roll.count, -1).max(axis=1)
    avar, _ = empirical_avar(Z, level)
    var = empirical_var(Z, level)
    return Z, var, avar, max(0.0, avar + epsilon)


def solve_socp(
    problem: ProblemDefinition,
    scenarios: ScenarioSet,
    level: RiskLevel,
    config: SCPConfig,
    initial_guess: Optional[ControlTrajectory] = None,
    method_tag: str = "saa",
) -> SolveReport:
    """Run the SCP loop on the sampled problem; returns the last iterate.

    Convergence means the normalized control change dropped to
    ``convergence_tol`` at an iteration where the risk rows were active
    (or the problem has no inequality constraints).
    """
    S, m = problem.nodes, problem.m
    if initial_guess is None:
        u = np.clip(np.zeros((S, m)), problem.control_lower, problem.control_upper)
    else:
        u = np.asarray(initial_guess.controls, dtype=float).copy()
        if u.shape != (S, m):
            raise ConfigurationError(f"initial guess shape {u.shape} != ({S}, {m})")
        if np.any(u < problem.control_lower - 1e-9) or np.any(u > problem.control_upper + 1e-9):
            raise ConfigurationError("initial guess violates the control box")

    def do_rollout(ctrl, iteration):
        try:
            roll = rollout(problem, ctrl, scenarios)
        except RolloutDivergenceError as err:
            raise RolloutDivergenceError(
                err.scenario,
                err.step,
                f"rollout diverged at SCP iteration {iteration} "
                f"(scenario {err.scenario}, step {err.step})",
            ) from err
        return roll

    controls = ControlTrajectory(controls=u, risk_t=0.0)
    roll = do_rollout(controls, 0)
    sens = rollout_sensitivities(problem, controls, scenarios, roll)
    Z0, var0, avar0, _ = _feasibility_stats(
        problem, controls, roll, scenarios, level, config.epsilon_margin
    )
    controls.risk_t = var0 if Z0.size else 0.0

    radius = config.trust_region_radius
    iterations: list[IterationStats] = []
    converged = False
    objective, _ = evaluate_objective(problem, controls, roll)
    var, avar = var0, avar0

    for it in range(1, config.max_iterations + 1):
        tic = time.perf_counter()
        risk_active = problem.n_constraints > 0 and it > config.risk_constraint_warmup
        sub = build_subproblem(
            problem,
            scenarios,
            level,
            config,
            controls,
            roll,
            sens,
            risk_rows=risk_active,
            trust_radius=radius,
        )
        z, status = solve_subproblem(sub, config.subproblem_tol)
        if status == "infeasible":
            return SolveReport(
                method=method_tag,
                converged=False,
                iterations=iterations,
                controls=controls,
                final_rollout=roll,
                objective=objective,
                insample_var=var,
                insample_avar=avar,
                alpha=level.alpha,
                failure=f"subproblem infeasible at iteration {it}",
            )
        du = z[: S * m].reshape(S, m)
        new_u = np.clip(controls.controls + du, problem.control_lower, problem.control_upper)
        change = np.linalg.norm(new_u - controls.controls) / max(np.linalg.norm(new_u), 1e-12)

        prev_objective = objective
        controls = ControlTrajectory(controls=new_u, risk_t=float(z[S * m]))
        roll = do_rollout(controls, it)
        sens = rollout_sensitivities(problem, controls, scenarios, roll)
        objective, _ = evaluate_objective(problem, controls, roll)
        _, var, avar, slack = _feasibility_stats(
            problem, controls, roll, scenarios, level, config.epsilon_margin
        )

        iterations.append(
            IterationStats(
                index=it,
                objective=objective,
                max_epigraph_slack=slack,
                trust_radius=radius,
                control_change=float(change),
                qp_status=status,
                wall_time=time.perf_counter() - tic,
            )
        )
        if config.adaptive_trust_region:
            if objective > prev_objective + 1e-12:
                radius = max(radius * 0.5, config.trust_region_radius / 16.0)
            else:
                radius = min(radius * 1.2, config.trust_region_radius * 4.0)

        if change <= config.convergence_tol and (problem.n_constraints == 0 or risk_active):
            converged = True
            break

    return SolveReport(
        method=method_tag,
        converged=converged,
        iterations=iterations,
        controls=controls,
        final_rollout=roll,
        objective=objective,
        insample_var=var,
        insample_avar=avar,
        alpha=level.alpha,
    )
