"""Comparison planners: deterministic (mean parameters, no noise) and a
joint-chance-constrained baseline that propagates a Gaussian state belief,
splits the risk budget over (constraint, step) cells with a union bound, and
tightens each linearized constraint by the matching normal quantile of its
belief standard deviation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .ocp import (
    ControlTrajectory,
    ProblemDefinition,
    evaluate_constraints,
    evaluate_objective,
    rollout,
    rollout_sensitivities,
)
from .risk import RiskLevel
from .sampling import Fixed, GaussianVector, Sampler, UniformBox
from .scenarios import ScenarioProblem
from .solver import (
    ConvexSubproblem,
    IterationStats,
    SCPConfig,
    SolveReport,
    _TINY_REG,
    _cost_model,
    solve_socp,
    solve_subproblem,
)


# ---------------------------------------------------------------------------
# deterministic baseline


def solve_deterministic(scenario: ScenarioProblem, config: SCPConfig) -> SolveReport:
    """Plan on the single mean scenario with zero noise.

    With one sample the epigraph machinery reduces exactly to pointwise
    G <= 0 along the nominal trajectory.
    """
    mean_set = scenario.mean_scenario()
    report = solve_socp(
        scenario.problem,
        mean_set,
        RiskLevel(0.5),
        config,
        method_tag="deterministic",
    )
    return report


# ---------------------------------------------------------------------------
# Gaussian belief propagation


@dataclass(frozen=True)
class GaussianBeliefTrajectory:
    means: np.ndarray        # (S+1, n)
    covariances: np.ndarray  # (S+1, n, n)


def propagate_gaussian(
    problem: ProblemDefinition,
    controls: ControlTrajectory,
    initial_belief: tuple,
    mean_parameters: np.ndarray,
) -> GaussianBeliefTrajectory:
    """First-order mean/covariance propagation on the node grid.

    mu_{k+1} = mu_k + b(mu_k, u_k) dt
    Sigma_{k+1} = A_k Sigma_k A_k^T + sigma sigma^T dt,  A_k = I + db/dx dt
    """
    mu0, Sigma0 = initial_belief
    mu = np.asarray(mu0, dtype=float)
    Sigma = np.asarray(Sigma0, dtype=float)
    n, S = problem.n, problem.nodes
    dt = problem.dt
    xi = np.asarray(mean_parameters, dtype=float)[None, :]

    means = np.empty((S + 1, n))
    covs = np.empty((S + 1, n, n))
    means[0], covs[0] = mu, Sigma
    eye = np.eye(n)
    for k in range(S):
        u_k = controls.controls[k]
        x = mu[None, :]
        b = problem.drift(x, u_k, xi)[0]
        A = eye + problem.drift_jac_x(x, u_k, xi)[0] * dt
        sig = problem.diffusion(x, u_k, xi)[0]
        mu = mu + b * dt
        Sigma = A @ Sigma @ A.T + sig @ sig.T * dt
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(Sigma))):
            raise RuntimeError(f"belief propagation diverged at step {k}")
        means[k + 1], covs[k + 1] = mu, Sigma
    return GaussianBeliefTrajectory(means=means, covariances=covs)


def belief_from_sampler(sampler: Sampler) -> tuple:
    """(mean, covariance) summary of an initial-state distribution."""
    mean = sampler.mean()
    n = mean.size
    if isinstance(sampler, GaussianVector):
        return mean, np.asarray(sampler.covariance, dtype=float)
    if isinstance(sampler, Fixed):
        return mean, np.zeros((n, n))
    if isinstance(sampler, UniformBox):
        lo, hi = sampler.mean_bounds()
        return mean, np.diag((hi - lo) ** 2 / 12.0)
    raise ConfigurationError(f"unsupported initial-state sampler {type(sampler).__name__}")


# ---------------------------------------------------------------------------
# standard normal quantile
#
# Rational approximation (relative error < 1.2e-9) refined by one Halley
# step on the erf-based CDF; absolute error well below 1e-8.

_ACK_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACK_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACK_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACK_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF on (0, 1)."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie strictly in (0, 1), got {p}")
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # one Halley refinement on Phi(x) - p
    e = _normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---------------------------------------------------------------------------
# risk allocation


@dataclass(frozen=True)
class RiskAllocation:
    """Per-(constraint, step) risk budgets alpha_jk, steps k = 1..S."""

    alphas: np.ndarray  # (N, S)

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if np.any(a <= 0):
            raise ConfigurationError("all allocated risks must be positive")

    def total(self) -> float:
        return float(np.sum(self.alphas))


def uniform_allocation(level: RiskLevel, N: int, S: int) -> RiskAllocation:
    return RiskAllocation(alphas=np.full((N, S), level.alpha / (N * S)))


def reallocate_by_slack(
    allocation: RiskAllocation,
    margins: np.ndarray,
    level: RiskLevel,
    active_tol: float = 1e-3,
    shrink: float = 0.5,
    floor: float = 1e-9,
) -> RiskAllocation:
    """Move budget from slack cells to active cells.

    Cells whose tightened constraint is slack by more than ``active_tol``
    give up a ``shrink`` fraction of their budget; the freed mass is spread
    evenly over the active cells. The total budget is preserved (= alpha).
    """
    a = allocation.alphas.copy()
    active = margins <= active_tol
    if not active.any() or active.all():
        return allocation
    freed = np.sum(a[~active]) * shrink
    a[~active] *= 1.0 - shrink
    a[active] += freed / np.count_nonzero(active)
    a = np.maximum(a, floor)
    a *= level.alpha / np.sum(a)  # exact budget
    return RiskAllocation(alphas=a)


# ---------------------------------------------------------------------------
# Gaussian + union-bound SCP baseline


def _build_boole_subproblem(
    problem: ProblemDefinition,
    config: SCPConfig,
    current: ControlTrajectory,
    roll,
    sens,
    backoffs: Optional[np.ndarray],
    scenarios,
    trust_radius: float,
) -> ConvexSubproblem:
    """QP over (du, slacks) with quantile-tightened pointwise rows.

    Variable layout matches the risk-constrained subproblem (du, t, y_1,
    slacks); t and y are unused here and pinned to zero by regularization.
    Tightened rows share one penalized slack so infeasible tightenings are
    reported rather than crashing the loop.
    """
    S, m, n_h = problem.nodes, problem.m, problem.n_eq
    nu = S * m
    N = problem.n_constraints
    dim = nu + 1 + 1 + 2 * n_h + 1
    col_slo = nu + 2
    col_sagg = col_slo + 2 * n_h

    _, grad = evaluate_objective(problem, current, roll, sens)
    cons = evaluate_constraints(problem, current, roll, scenarios, sens, with_gradients=True)

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

    u_flat = current.controls.ravel()
    lower = np.tile(problem.control_lower, S) - u_flat
    upper = np.tile(problem.control_upper, S) - u_flat
    box = sp.hstack([sp.identity(nu, format="csr"), sp.csr_matrix((nu, dim - nu))])
    add_rows(box, np.maximum(lower, -trust_radius), np.minimum(upper, trust_radius))

    ns = 2 + 2 * n_h + 1  # t, y_1 pinned at zero; slacks >= 0
    pin = sp.hstack([sp.csr_matrix((2, nu)), sp.identity(2, format="csr"), sp.csr_matrix((2, dim - nu - 2))])
    add_rows(pin, np.zeros(2), np.zeros(2))
    slacks = sp.hstack([sp.csr_matrix((2 * n_h + 1, col_slo)), sp.identity(2 * n_h + 1, format="csr")])
    add_rows(slacks, np.zeros(2 * n_h + 1), np.full(2 * n_h + 1, np.inf))

    if n_h > 0:
        Jh = cons.eq_mean_jac
        h = cons.eq_mean
        up = sp.hstack(
            [
                sp.csr_matrix(Jh),
                sp.csr_matrix((n_h, 2 + n_h)),
                -sp.identity(n_h, format="csr"),
                sp.csr_matrix((n_h, 1)),
            ]
        )
        add_rows(up, np.full(n_h, -np.inf), config.delta_m - h)
        low = sp.hstack(
            [
                sp.csr_matrix(Jh),
                sp.csr_matrix((n_h, 2)),
                sp.identity(n_h, format="csr"),
                sp.csr_matrix((n_h, n_h + 1)),
            ]
        )
        add_rows(low, -config.delta_m - h, np.full(n_h, np.inf))

    n_fixed = nu + ns + 2 * n_h
    n_rows = 0
    if backoffs is not None and N > 0:
        # rows k = 1..S: G(mu_k) + grad^T J du + backoff_jk - s <= 0
        J = sens.jacobians
        data_parts, row_parts, col_parts, ub_parts = [], [], [], []
        row = 0
        for k in range(1, S + 1):
            ncols = min(k, S) * m
            rows_k = row + np.arange(N)
            coef = np.einsum("jn,nz->jz", cons.grads_x[0, k], J[0, k, :, :ncols])
            data_parts.append(coef.reshape(N * ncols))
            row_parts.append(np.repeat(rows_k, ncols))
            col_parts.append(np.tile(np.arange(ncols), N))
            data_parts.append(np.full(N, -1.0))
            row_parts.append(rows_k)
            col_parts.append(np.full(N, col_sagg))
            ub_parts.append(-(cons.values[0, k, :] + backoffs[:, k - 1]))
            row += N
        n_rows = row
        mat = sp.csr_matrix(
            (np.concatenate(data_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
            shape=(n_rows, dim),
        )
        add_rows(mat, np.full(n_rows, -np.inf), np.concatenate(ub_parts))

    A = sp.vstack(rows_A, format="csc")
    return ConvexSubproblem(
        P=sp.csc_matrix(sp.triu(P)),
        q=q,
        A=A,
        l=np.concatenate(rows_l),
        u=np.concatenate(rows_u),
        n_controls=nu,
        n_scenarios=1,
        n_eq=n_h,
        rows_epigraph=slice(n_fixed, n_fixed + n_rows),
        row_aggregate=None,
    )


def _boole_backoffs(problem, cons, belief, allocation):
    """kappa_jk * sqrt(grad_G^T Sigma_k grad_G) for k = 1..S."""
    S, N = problem.nodes, problem.n_constraints
    backoffs = np.empty((N, S))
    for k in range(1, S + 1):
        g = cons.grads_x[0, k]                    # (N, n)
        Sig = belief.covariances[k]
        var = np.einsum("jn,nr,jr->j", g, Sig, g)
        std = np.sqrt(np.maximum(var, 0.0))
        for j in range(N):
            backoffs[j, k - 1] = normal_quantile(1.0 - allocation.alphas[j, k - 1]) * std[j]
    return backoffs


def solve_gaussian_boole(
    scenario: ScenarioProblem,
    level: RiskLevel,
    config: SCPConfig,
    allocation_mode: str = "uniform",
) -> SolveReport:
    """SCP on the mean trajectory with union-bound quantile tightening.

    ``allocation_mode``: 'uniform' splits alpha evenly over the N*S cells;
    'adaptive' runs a uniform pass, moves budget from slack cells to active
    ones, and solves once more.
    """
    if allocation_mode not in ("uniform", "adaptive"):
        raise ConfigurationError(f"unknown allocation mode {allocation_mode!r}")
    problem = scenario.problem
    N, S = problem.n_constraints, problem.nodes
    allocation = uniform_allocation(level, max(N, 1), S)
    report = _solve_boole_once(scenario, level, config, allocation)
    if allocation_mode == "adaptive" and N > 0 and report.controls is not None:
        margins = _tightened_margins(scenario, report.controls, allocation)
        allocation = reallocate_by_slack(allocation, margins, level)
        report = _solve_boole_once(scenario, level, config, allocation)
    return report


def _mean_quantities(scenario, controls):
    problem = scenario.problem
    mean_set = scenario.mean_scenario()
    roll = rollout(problem, controls, mean_set)
    sens = rollout_sensitivities(problem, controls, mean_set, roll)
    cons = evaluate_constraints(problem, controls, roll, mean_set, sens, with_gradients=True)
    belief = propagate_gaussian(
        problem,
        controls,
        belief_from_sampler(scenario.initial_state),
        scenario.parameters.mean() if scenario.parameters is not None else np.zeros(0),
    )
    return mean_set, roll, sens, cons, belief


def _tightened_margins(scenario, controls, allocation):
    problem = scenario.problem
    _, _, _, cons, belief = _mean_quantities(scenario, controls)
    backoffs = _boole_backoffs(problem, cons, belief, allocation)
    return -(cons.values[0, 1:, :].T + backoffs)  # (N, S) slack of each row


def _solve_boole_once(scenario, level, config, allocation) -> SolveReport:
    problem = scenario.problem
    S, m = problem.nodes, problem.m
    N = problem.n_constraints
    controls = ControlTrajectory(
        controls=np.clip(np.zeros((S, m)), problem.control_lower, problem.control_upper)
    )
    mean_set, roll, sens, cons, belief = _mean_quantities(scenario, controls)
    objective, _ = evaluate_objective(problem, controls, roll)

    radius = config.trust_region_radius
    iterations: list[IterationStats] = []
    converged = False
    worst_row = float("nan")

    for it in range(1, config.max_iterations + 1):
        tic = time.perf_counter()
        risk_active = N > 0 and it > config.risk_constraint_warmup
        backoffs = _boole_backoffs(problem, cons, belief, allocation) if risk_active else None
        sub = _build_boole_subproblem(
            problem, config, controls, roll, sens, backoffs, mean_set, radius
        )
        z, status = solve_subproblem(sub, config.subproblem_tol)
        if status == "infeasible":
            return SolveReport(
                method="gaussian_boole",
                converged=False,
                iterations=iterations,
                controls=controls,
                final_rollout=roll,
                objective=objective,
                insample_var=worst_row,
                insample_avar=worst_row,
                alpha=level.alpha,
                failure=f"tightened subproblem infeasible at iteration {it}",
            )
        du = z[: S * m].reshape(S, m)
        new_u = np.clip(controls.controls + du, problem.control_lower, problem.control_upper)
        change = np.linalg.norm(new_u - controls.controls) / max(np.linalg.norm(new_u), 1e-12)
        controls = ControlTrajectory(controls=new_u)
        mean_set, roll, sens, cons, belief = _mean_quantities(scenario, controls)
        objective, _ = evaluate_objective(problem, controls, roll)

        if N > 0:
            backoffs_now = _boole_backoffs(problem, cons, belief, allocation)
            worst_row = float((cons.values[0, 1:, :].T + backoffs_now).max())
            slack = max(0.0, worst_row)
        else:
            slack = 0.0
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
        if change <= config.convergence_tol and (N == 0 or risk_active):
            converged = True
            break

    failure = None
    if N > 0 and converged and worst_row > 10 * config.subproblem_tol:
        failure = f"tightened rows violated by {worst_row:.3g} at the converged iterate"
    return SolveReport(
        method="gaussian_boole",
        converged=converged,
        iterations=iterations,
        controls=controls,
        final_rollout=roll,
        objective=objective,
        insample_var=worst_row,
        insample_avar=worst_row,
        alpha=level.alpha,
        failure=failure,
    )
