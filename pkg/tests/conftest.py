"""Shared toy problems for the test suite."""

from __future__ import annotations

import numpy as np

from risktrajopt import Fixed, ProblemDefinition
from risktrajopt.scenarios import ScenarioProblem


def make_linear_problem(
    A=None,
    B=None,
    n=2,
    m=2,
    S=5,
    T=1.0,
    noise=0.0,
    Q=None,
    R=None,
    goal=None,
    sphere=None,
    control_bound=8.0,
    x0=(0.0, 0.0),
):
    """Linear dynamics dx = (A x + B u) dt + noise dW with quadratic costs.

    Optional sphere=(center, radius) adds one avoid constraint
    G = radius - ||x - center||; optional goal adds the terminal equality
    x(T) = goal. Cost is x^T Q x + u^T R u (Q may be None for control-only).
    """
    A = np.zeros((n, n)) if A is None else np.asarray(A, dtype=float)
    B = np.eye(n, m) if B is None else np.asarray(B, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    Q = None if Q is None else np.asarray(Q, dtype=float)

    def drift(x, u, xi):
        return x @ A.T + u @ B.T

    def drift_jac_x(x, u, xi):
        return np.broadcast_to(A, (x.shape[0], n, n)).copy()

    def drift_jac_u(x, u, xi):
        return np.broadcast_to(B, (x.shape[0], n, m)).copy()

    def diffusion(x, u, xi):
        sig = np.zeros((x.shape[0], n, n))
        idx = np.arange(n)
        sig[:, idx, idx] = noise
        return sig

    def running_cost(x, u):
        base = np.full(x.shape[0], u @ R @ u)
        if Q is not None:
            base = base + np.einsum("mi,ij,mj->m", x, Q, x)
        return base

    def running_cost_grad_x(x, u):
        if Q is None:
            return np.zeros((x.shape[0], n))
        return 2.0 * x @ Q.T

    def running_cost_grad_u(x, u):
        return np.tile(2.0 * R @ u, (x.shape[0], 1))

    kwargs = {}
    if sphere is not None:
        center, radius = np.asarray(sphere[0], dtype=float), float(sphere[1])

        def constraints(x, xi):
            return (radius - np.linalg.norm(x - center, axis=1))[:, None]

        def constraints_grad_x(x, xi):
            w = x - center
            d = np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)
            g = np.zeros((x.shape[0], 1, n))
            g[:, 0, :] = -w / d
            return g

        kwargs.update(
            n_constraints=1, constraints=constraints, constraints_grad_x=constraints_grad_x
        )
    if goal is not None:
        target = np.asarray(goal, dtype=float)

        def terminal_eq(x):
            return x - target

        def terminal_eq_jac(x):
            return np.broadcast_to(np.eye(n), (x.shape[0], n, n)).copy()

        kwargs.update(n_eq=n, terminal_eq=terminal_eq, terminal_eq_jac=terminal_eq_jac)

    problem = ProblemDefinition(
        n=n,
        m=m,
        q=0,
        horizon=T,
        nodes=S,
        control_lower=-control_bound * np.ones(m),
        control_upper=control_bound * np.ones(m),
        drift=drift,
        drift_jac_x=drift_jac_x,
        drift_jac_u=drift_jac_u,
        diffusion=diffusion,
        running_cost=running_cost,
        running_cost_grad_x=running_cost_grad_x,
        running_cost_grad_u=running_cost_grad_u,
        running_cost_hess_x=None if Q is None else 2.0 * Q,
        running_cost_hess_u=2.0 * R,
        **kwargs,
    )
    return ScenarioProblem(
        name="toy",
        problem=problem,
        initial_state=Fixed(tuple(np.asarray(x0, dtype=float))),
        parameters=None,
        default_alpha=0.3,
        solver_overrides={"trust_region_weight": 0.05, "trust_region_radius": 3.0},
    )


def make_smooth_nonlinear_problem(seed=0, n=3, m=2, S=6, T=1.2):
    """Random smooth problem with state-dependent drift and diffusion.

    Exercises every analytic-partial code path (including the diffusion
    Jacobians); coefficients are kept small so rollouts stay tame.
    """
    rng = np.random.default_rng(seed)
    W1 = 0.5 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    d = 0.1 * rng.normal(size=m)
    sig0 = 0.05 + 0.05 * rng.random(size=n)
    idx = np.arange(n)

    def drift(x, u, xi):
        return np.tanh(x @ W1.T) + u @ B.T

    def drift_jac_x(x, u, xi):
        pre = x @ W1.T
        sech2 = 1.0 / np.cosh(pre) ** 2
        return sech2[:, :, None] * W1[None, :, :]

    def drift_jac_u(x, u, xi):
        return np.broadcast_to(B, (x.shape[0], n, m)).copy()

    # diagonal diffusion sig_ii = sig0_i * (1 + 0.3 sin(x_i) + d.u)
    def diffusion(x, u, xi):
        sig = np.zeros((x.shape[0], n, n))
        sig[:, idx, idx] = sig0 * (1.0 + 0.3 * np.sin(x[:, idx]) + d @ u)
        return sig

    def diffusion_jac_x(x, u, xi):
        jac = np.zeros((x.shape[0], n, n, n))
        jac[:, idx, idx, idx] = sig0 * 0.3 * np.cos(x[:, idx])
        return jac

    def diffusion_jac_u(x, u, xi):
        jac = np.zeros((x.shape[0], n, n, m))
        jac[:, idx, idx, :] = sig0[:, None] * d[None, :]
        return jac

    def running_cost(x, u):
        return np.einsum("mi,mi->m", x, x) + np.full(x.shape[0], u @ u)

    def running_cost_grad_x(x, u):
        return 2.0 * x

    def running_cost_grad_u(x, u):
        return np.tile(2.0 * u, (x.shape[0], 1))

    def terminal_cost(x):
        return np.einsum("mi,mi->m", x, x)

    def terminal_cost_grad(x):
        return 2.0 * x

    problem = ProblemDefinition(
        n=n,
        m=m,
        q=0,
        horizon=T,
        nodes=S,
        control_lower=-5.0 * np.ones(m),
        control_upper=5.0 * np.ones(m),
        drift=drift,
        drift_jac_x=drift_jac_x,
        drift_jac_u=drift_jac_u,
        diffusion=diffusion,
        diffusion_jac_x=diffusion_jac_x,
        diffusion_jac_u=diffusion_jac_u,
        running_cost=running_cost,
        running_cost_grad_x=running_cost_grad_x,
        running_cost_grad_u=running_cost_grad_u,
        terminal_cost=terminal_cost,
        terminal_cost_grad=terminal_cost_grad,
    )
    return ScenarioProblem(
        name="smooth",
        problem=problem,
        initial_state=Fixed(tuple(0.3 * rng.normal(size=n))),
        parameters=None,
        default_alpha=0.2,
        solver_overrides={},
    )
