import numpy as np
import pytest

from risktrajopt import (
    ConfigurationError,
    ControlTrajectory,
    Fixed,
    ProblemDefinition,
    RandomSeed,
    RolloutDivergenceError,
    evaluate_constraints,
    evaluate_objective,
    rollout,
    rollout_sensitivities,
    sample_scenarios,
)
from risktrajopt.ocp import rollout_to_csv
from risktrajopt.scenarios import ObstacleSet, Sphere, build_obstacle_constraints

from conftest import make_linear_problem, make_smooth_nonlinear_problem


def scenarios_for(scn, M, seed=0):
    return scn.sample(RandomSeed(seed), M)


def test_frozen_dynamics_keeps_initial_state():
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.zeros((2, 2)), x0=(1.5, -0.5))
    ss = scenarios_for(scn, 4)
    roll = rollout(scn.problem, ControlTrajectory(np.ones((5, 2))), ss)
    assert np.allclose(roll.states, np.array([1.5, -0.5]))


def test_constant_control_integrator_exact():
    # b = u: Euler on constant drift is exact, x_k = x0 + c k dt
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.eye(2), S=8, T=2.0, x0=(0.0, 1.0))
    c = np.array([0.3, -0.2])
    ss = scenarios_for(scn, 3)
    roll = rollout(scn.problem, ControlTrajectory(np.tile(c, (8, 1))), ss)
    dt = 0.25
    for k in range(9):
        assert np.allclose(roll.states[:, k], np.array([0.0, 1.0]) + c * k * dt, atol=1e-14)


def test_euler_error_halves_with_node_count():
    # scalar dx = x dt, x(1) = e: first-order error, halving as S doubles
    errors = {}
    for S in (16, 32, 64):
        scn = make_linear_problem(A=[[1.0]], B=[[0.0]], n=1, m=1, S=S, T=1.0, x0=(1.0,))
        ss = scenarios_for(scn, 1)
        roll = rollout(scn.problem, ControlTrajectory(np.zeros((S, 1))), ss)
        errors[S] = abs(roll.states[0, -1, 0] - np.e)
    assert errors[32] / errors[16] == pytest.approx(0.5, abs=0.1)
    assert errors[64] / errors[32] == pytest.approx(0.5, abs=0.1)


def test_substeps_reduce_integration_error():
    scn = make_linear_problem(A=[[1.0]], B=[[0.0]], n=1, m=1, S=16, T=1.0, x0=(1.0,))
    scn.problem.integration_substeps = 4
    ss = scenarios_for(scn, 1)
    roll_fine = rollout(scn.problem, ControlTrajectory(np.zeros((16, 1))), ss)
    err_fine = abs(roll_fine.states[0, -1, 0] - np.e)
    scn.problem.integration_substeps = 1
    ss1 = scenarios_for(scn, 1)
    err_coarse = abs(rollout(scn.problem, ControlTrajectory(np.zeros((16, 1))), ss1).states[0, -1, 0] - np.e)
    assert err_fine == pytest.approx(err_coarse / 4.0, rel=0.15)


def test_rollout_transitions_satisfy_recursion_exactly():
    # re-evaluating the recursion from the stored node states reproduces the
    # next node to machine precision
    scn = make_smooth_nonlinear_problem(seed=5)
    ss = scenarios_for(scn, 4)
    u = ControlTrajectory(0.3 * np.random.default_rng(1).normal(size=(6, 2)))
    roll = rollout(scn.problem, u, ss)
    dt = scn.problem.dt
    for k in range(scn.problem.nodes):
        x = roll.states[:, k]
        step = (
            x
            + scn.problem.drift(x, u.controls[k], ss.parameters) * dt
            + np.einsum(
                "mnd,md->mn",
                scn.problem.diffusion(x, u.controls[k], ss.parameters),
                ss.brownian_increments[:, k],
            )
        )
        assert np.abs(step - roll.states[:, k + 1]).max() < 1e-12


def test_rollout_determinism():
    scn = make_smooth_nonlinear_problem()
    ss = scenarios_for(scn, 6)
    u = ControlTrajectory(0.3 * np.ones((6, 2)))
    a = rollout(scn.problem, u, ss)
    b = rollout(scn.problem, u, ss)
    assert np.array_equal(a.states, b.states)


def test_rollout_divergence_reports_indices():
    n = 1

    def drift(x, u, xi):
        with np.errstate(over="ignore", invalid="ignore"):
            return x**3  # finite-time blowup under Euler

    def jac(x, u, xi):
        return (3 * x[:, :, None] ** 2).reshape(x.shape[0], 1, 1)

    def jac_u(x, u, xi):
        return np.zeros((x.shape[0], 1, 1))

    def diff(x, u, xi):
        return np.zeros((x.shape[0], 1, 1))

    prob = ProblemDefinition(
        n=1, m=1, q=0, horizon=40.0, nodes=40,
        control_lower=np.array([-1.0]), control_upper=np.array([1.0]),
        drift=drift, drift_jac_x=jac, drift_jac_u=jac_u, diffusion=diff,
    )
    ss = sample_scenarios(RandomSeed(0), M=3, S=40, dt=1.0, initial_state=Fixed((1.5,)))
    with pytest.raises(RolloutDivergenceError) as err:
        rollout(prob, ControlTrajectory(np.zeros((40, 1))), ss)
    assert err.value.scenario == 0 and err.value.step >= 0
    masked = rollout(prob, ControlTrajectory(np.zeros((40, 1))), ss, raise_on_divergence=False)
    assert masked.diverged.all()
    assert (masked.first_divergence_step >= 0).all()


def test_dimension_mismatch_rejected():
    scn = make_linear_problem()
    ss = scenarios_for(scn, 2)
    with pytest.raises(ConfigurationError):
        rollout(scn.problem, ControlTrajectory(np.zeros((4, 2))), ss)  # wrong S
    with pytest.raises(ConfigurationError):
        rollout(scn.problem, ControlTrajectory(np.zeros((5, 3))), ss)  # wrong m


# ---------------------------------------------------------------------------
# sensitivities


def test_integrator_sensitivities_closed_form():
    # b = u: dx_k/du_s = dt I for s < k, zero otherwise
    S, m = 5, 2
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.eye(2), S=S, T=1.0)
    ss = scenarios_for(scn, 2)
    u = ControlTrajectory(0.1 * np.ones((S, m)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    dt = 0.2
    for k in range(S + 1):
        for s in range(S):
            block = sens.jacobians[:, k, :, s * m : (s + 1) * m]
            want = dt * np.eye(2) if s < k else np.zeros((2, 2))
            assert np.allclose(block, want, atol=1e-14)


def test_causality_zero_blocks_random_problem():
    scn = make_smooth_nonlinear_problem(seed=3)
    ss = scenarios_for(scn, 4)
    u = ControlTrajectory(0.2 * np.random.default_rng(0).normal(size=(6, 2)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    m = scn.problem.m
    assert np.all(sens.jacobians[:, 0] == 0.0)
    for k in range(scn.problem.nodes + 1):
        assert np.all(sens.jacobians[:, k, :, k * m :] == 0.0)


def finite_difference_states(problem, controls, ss, h=1e-6):
    """Central differences of every node state w.r.t. every control entry."""
    S, m = problem.nodes, problem.m
    M = ss.count
    J = np.zeros((M, S + 1, problem.n, S * m))
    for z in range(S * m):
        for sign in (+1, -1):
            u = controls.controls.copy().ravel()
            u[z] += sign * h
            r = rollout(problem, ControlTrajectory(u.reshape(S, m)), ss)
            J[:, :, :, z] += sign * r.states / (2 * h)
    return J


def test_sensitivities_match_finite_differences():
    scn = make_smooth_nonlinear_problem(seed=7)
    ss = scenarios_for(scn, 3)
    rng = np.random.default_rng(4)
    u = ControlTrajectory(0.5 * rng.normal(size=(6, 2)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    fd = finite_difference_states(scn.problem, u, ss)
    assert np.abs(sens.jacobians - fd).max() < 1e-4


# ---------------------------------------------------------------------------
# objective and constraints


def test_objective_control_only():
    S, m = 5, 2
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.eye(2), S=S, T=1.0)
    ss = scenarios_for(scn, 3)
    rng = np.random.default_rng(1)
    u = ControlTrajectory(rng.normal(size=(S, m)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    value, grad = evaluate_objective(scn.problem, u, roll, sens)
    dt = 0.2
    assert value == pytest.approx(dt * np.sum(u.controls**2), rel=1e-12)
    assert np.allclose(grad.reshape(S, m), 2 * dt * u.controls, atol=1e-12)


def test_objective_terminal_only_uncontrollable():
    n = 2

    def term(x):
        return np.einsum("mi,mi->m", x, x)

    def term_grad(x):
        return 2.0 * x

    scn = make_linear_problem(A=np.zeros((n, n)), B=np.zeros((n, 2)), x0=(0.5, -1.0))
    scn.problem.terminal_cost = term
    scn.problem.terminal_cost_grad = term_grad
    scn.problem.running_cost = None
    ss = scenarios_for(scn, 4)
    u = ControlTrajectory(np.ones((5, 2)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    value, grad = evaluate_objective(scn.problem, u, roll, sens)
    assert value == pytest.approx(0.5**2 + 1.0**2, rel=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-14)


def test_objective_gradient_matches_finite_differences():
    scn = make_smooth_nonlinear_problem(seed=11)
    ss = scenarios_for(scn, 3)
    rng = np.random.default_rng(2)
    u = ControlTrajectory(0.4 * rng.normal(size=(6, 2)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    _, grad = evaluate_objective(scn.problem, u, roll, sens)
    h = 1e-6
    fd = np.zeros_like(grad)
    for z in range(grad.size):
        for sign in (+1, -1):
            du = u.controls.copy().ravel()
            du[z] += sign * h
            ct = ControlTrajectory(du.reshape(6, 2))
            val, _ = evaluate_objective(scn.problem, ct, rollout(scn.problem, ct, ss))
            fd[z] += sign * val / (2 * h)
    assert np.abs(grad - fd).max() < 1e-4


def test_constant_constraints_tensor():
    scn = make_linear_problem(sphere=((10.0, 10.0), 0.5))  # far away: G ~ -dist
    ss = scenarios_for(scn, 2)
    u = ControlTrajectory(np.zeros((5, 2)))
    roll = rollout(scn.problem, u, ss)
    cons = evaluate_constraints(scn.problem, u, roll, ss, with_gradients=False)
    assert cons.values.shape == (2, 6, 1)
    assert np.all(cons.values < 0)


def test_terminal_equality_at_goal_is_zero():
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.zeros((2, 2)), goal=(0.7, -0.2), x0=(0.7, -0.2))
    ss = scenarios_for(scn, 3)
    u = ControlTrajectory(np.ones((5, 2)))
    roll = rollout(scn.problem, u, ss)
    sens = rollout_sensitivities(scn.problem, u, ss, roll)
    cons = evaluate_constraints(scn.problem, u, roll, ss, sens)
    assert np.allclose(cons.eq_mean, 0.0, atol=1e-14)
    assert cons.eq_mean_jac.shape == (2, 10)


def test_sphere_sdf_sign_pattern_on_line():
    # straight-line rollout through a known sphere: signs from plain geometry
    center, radius = np.array([1.0, 0.0]), 0.4
    obstacles = ObstacleSet(spheres=(Sphere(center=Fixed(tuple(center)), radius=Fixed((radius,))),))
    cons_fn, grads_fn, lo, hi, N = build_obstacle_constraints(obstacles, n=2, pos=slice(0, 2), offset=0)
    assert N == 1
    S = 10
    scn = make_linear_problem(A=np.zeros((2, 2)), B=np.eye(2), S=S, T=2.0, x0=(0.0, 0.0))
    scn.problem.n_constraints = 1
    scn.problem.constraints = cons_fn
    scn.problem.constraints_grad_x = grads_fn
    scn.problem.q = 3  # sphere center + radius read from the parameter vector
    sp_obj = scn
    ss = sample_scenarios(RandomSeed(0), M=1, S=S, dt=0.2, initial_state=Fixed((0.0, 0.0)),
                          parameters=Fixed(tuple(np.concatenate([center, [radius]]))))
    u = ControlTrajectory(np.tile([1.0, 0.0], (S, 1)))  # walk straight through
    roll = rollout(sp_obj.problem, u, ss)
    cons = evaluate_constraints(sp_obj.problem, u, roll, ss, with_gradients=False)
    xs = roll.states[0, :, 0]
    expected_sign = np.sign(radius - np.abs(xs - 1.0))
    assert np.array_equal(np.sign(cons.values[0, :, 0]), expected_sign)


def test_rollout_csv_export(tmp_path):
    scn = make_linear_problem()
    ss = scenarios_for(scn, 2)
    roll = rollout(scn.problem, ControlTrajectory(np.zeros((5, 2))), ss)
    rollout_to_csv(roll, tmp_path / "rollout.csv")
    data = np.loadtxt(tmp_path / "rollout.csv", delimiter=",", skiprows=1)
    assert data.shape == (2 * 6, 2 + 2)
    assert np.array_equal(data[:, 2:].reshape(2, 6, 2), roll.states)
