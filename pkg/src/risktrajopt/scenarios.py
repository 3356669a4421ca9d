"""Reference problems: drone with uncertain payload/obstacles, and an
ego-vehicle interacting with a pedestrian; plus signed-distance constraint
builders reusable for other problems.

All numeric defaults below are package choices, documented per field. They
are tuned so that (a) the deterministic mean problem is feasible, and
(b) planning without uncertainty violates constraints in a large fraction
of validation scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .ocp import ProblemDefinition
from .sampling import (
    Fixed,
    GaussianVector,
    RandomSeed,
    Sampler,
    ScenarioSet,
    UniformBox,
    sample_scenarios,
)


@dataclass
class ScenarioProblem:
    """A built problem together with its uncertainty distributions."""

    name: str
    problem: ProblemDefinition
    initial_state: Sampler
    parameters: Optional[Sampler]
    default_alpha: float
    solver_overrides: dict = field(default_factory=dict)  # SCPConfig kwargs tuned per scenario

    def sample(self, seed: RandomSeed, M: int) -> ScenarioSet:
        return sample_scenarios(
            seed,
            M,
            self.problem.total_steps,
            self.problem.substep_dt,
            self.initial_state,
            self.parameters,
            noise_dim=self.problem.noise_dim,
        )

    def mean_scenario(self) -> ScenarioSet:
        """Single noise-free scenario at the mean of every distribution."""
        x0 = self.initial_state.mean()[None, :]
        if self.parameters is not None:
            xi = self.parameters.mean()[None, :]
        else:
            xi = np.zeros((1, 0))
        dW = np.zeros((1, self.problem.total_steps, self.problem.noise_dim))
        return ScenarioSet(
            initial_states=x0,
            parameters=xi,
            brownian_increments=dW,
            dt=self.problem.substep_dt,
        )


# ---------------------------------------------------------------------------
# signed-distance obstacle constraints
#
# Sign convention: G(x) > 0 strictly inside an obstacle, 0 on its boundary,
# < 0 outside, so collision avoidance reads G <= 0.


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid: sampled center and semi-axis lengths."""

    center: Sampler
    axes: Sampler


@dataclass(frozen=True)
class Sphere:
    center: Sampler
    radius: Sampler  # dim-1 sampler


@dataclass(frozen=True)
class ObstacleSet:
    ellipsoids: tuple = ()
    spheres: tuple = ()
    padding: float = 0.0  # inflation added to axes/radii (corner-cutting guard)

    def __post_init__(self):
        if self.padding < 0:
            raise ConfigurationError("obstacle padding must be >= 0")


def _sampler_bounds(s: Sampler):
    """Support bounds for Fixed/UniformBox samplers (obstacle geometry)."""
    if isinstance(s, Fixed):
        v = s.mean()
        return v, v
    if isinstance(s, UniformBox):
        return s.mean_bounds()
    raise ConfigurationError("obstacle geometry samplers must be Fixed or UniformBox")


def build_obstacle_constraints(obstacles: ObstacleSet, n: int, pos: slice, offset: int):
    """Constraint callbacks for an obstacle set with geometry read from xi.

    Parameters occupy xi[:, offset:offset+width] in blocks of
    (center, axes) per ellipsoid and (center, radius) per sphere. Returns
    (constraints_fn, grads_fn, param_low, param_high, N).
    """
    dim = pos.stop - pos.start
    lows, highs = [], []
    entries = []  # (kind, param_slice)
    cursor = offset
    for ell in obstacles.ellipsoids:
        c_lo, c_hi = _sampler_bounds(ell.center)
        a_lo, a_hi = _sampler_bounds(ell.axes)
        if c_lo.size != dim or a_lo.size != dim:
            raise ConfigurationError("ellipsoid samplers must match the position dimension")
        if np.any(a_lo <= 0):
            raise ConfigurationError("ellipsoid semi-axes must be strictly positive")
        lows += [c_lo, a_lo]
        highs += [c_hi, a_hi]
        entries.append(("ellipsoid", slice(cursor, cursor + 2 * dim)))
        cursor += 2 * dim
    for sph in obstacles.spheres:
        c_lo, c_hi = _sampler_bounds(sph.center)
        r_lo, r_hi = _sampler_bounds(sph.radius)
        if c_lo.size != dim or r_lo.size != 1:
            raise ConfigurationError("sphere samplers must be (position-dim center, scalar radius)")
        if np.any(r_lo <= 0):
            raise ConfigurationError("sphere radii must be strictly positive")
        lows += [c_lo, r_lo]
        highs += [c_hi, r_hi]
        entries.append(("sphere", slice(cursor, cursor + dim + 1)))
        cursor += dim + 1

    N = len(entries)
    pad = obstacles.padding

    def constraints(x, xi):
        p = x[:, pos]
        out = np.empty((x.shape[0], N))
        for j, (kind, sl) in enumerate(entries):
            block = xi[:, sl]
            c = block[:, :dim]
            w = p - c
            if kind == "ellipsoid":
                ax = block[:, dim:] + pad
                out[:, j] = 1.0 - np.sum((w / ax) ** 2, axis=1)
            else:
                r = block[:, dim] + pad
                out[:, j] = r - np.linalg.norm(w, axis=1)
        return out

    def grads(x, xi):
        p = x[:, pos]
        out = np.zeros((x.shape[0], N, n))
        for j, (kind, sl) in enumerate(entries):
            block = xi[:, sl]
            c = block[:, :dim]
            w = p - c
            if kind == "ellipsoid":
                ax = block[:, dim:] + pad
                out[:, j, pos] = -2.0 * w / ax**2
            else:
                d = np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)
                out[:, j, pos] = -w / d
        return out

    if N == 0:
        return None, None, np.zeros(0), np.zeros(0), 0
    return constraints, grads, np.concatenate(lows), np.concatenate(highs), N


# ---------------------------------------------------------------------------
# drone with uncertain payload and uncertain ellipsoidal obstacles


def default_drone_obstacles() -> ObstacleSet:
    """Three uncertain ellipsoids between start and goal."""

    def ell(cx, cy, cz):
        return Ellipsoid(
            center=Fixed((cx, cy, cz)),
            axes=UniformBox((0.36, 0.36, 0.36), (0.44, 0.44, 0.44)),
        )

    return ObstacleSet(ellipsoids=(ell(1.25, 0.12, 0.0), ell(1.25, 1.0, 0.35), ell(1.25, -0.95, -0.35)))


@dataclass(frozen=True)
class DroneScenarioConfig:
    """Point-mass drone, state x = (p, v) in R^6, control u in R^3.

    The transported payload makes the total mass uniform on ``mass_range``;
    drag is componentwise -drag_coeff*|v|v; diffusion diffusion_coeff/m acts
    on velocity. Obstacle semi-axes are uniform draws.
    """

    mass_range: tuple = (0.9, 1.1)       # kg
    drag_coeff: float = 0.1               # kg/m
    diffusion_coeff: float = 0.10         # velocity diffusion, m/s per sqrt(s)
    feedback_gain: tuple = tuple(tuple(row) for row in np.zeros((3, 6)))
    obstacles: ObstacleSet = field(default_factory=default_drone_obstacles)
    initial_state: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    goal: tuple = (2.5, 0.0, 0.0, 0.0, 0.0, 0.0)
    effort_weight: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    horizon: float = 2.0                  # s
    nodes: int = 20
    alpha: float = 0.1
    control_bound: float = 8.0            # |u_i| <= bound, m/s^2 * kg scale


def build_drone_problem(config: DroneScenarioConfig) -> ScenarioProblem:
    m_lo, m_hi = config.mass_range
    if m_lo <= 0 or m_hi < m_lo:
        raise ConfigurationError("mass support must be positive with low <= high")
    K = np.asarray(config.feedback_gain, dtype=float)
    R = np.asarray(config.effort_weight, dtype=float)
    if K.shape != (3, 6) or R.shape != (3, 3):
        raise ConfigurationError("feedback gain must be 3x6 and effort weight 3x3")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise ConfigurationError("effort weight must be symmetric positive definite")
    goal = np.asarray(config.goal, dtype=float)
    x0 = np.asarray(config.initial_state, dtype=float)
    drag, beta_sig = config.drag_coeff, config.diffusion_coeff

    cons_fn, grads_fn, p_lo, p_hi, N = build_obstacle_constraints(
        config.obstacles, n=6, pos=slice(0, 3), offset=1
    )
    param_low = np.concatenate([[m_lo], p_lo])
    param_high = np.concatenate([[m_hi], p_hi])
    eye3 = np.eye(3)
    vidx = np.arange(3)

    def drift(x, u, xi):
        mass = xi[:, 0:1]
        v = x[:, 3:6]
        out = np.empty_like(x)
        out[:, 0:3] = v
        out[:, 3:6] = (-drag * np.abs(v) * v + u + x @ K.T) / mass
        return out

    def drift_jac_x(x, u, xi):
        mass = xi[:, 0:1]
        v = x[:, 3:6]
        J = np.zeros((x.shape[0], 6, 6))
        J[:, 0:3, 3:6] = eye3
        bottom = np.broadcast_to(K, (x.shape[0], 3, 6)).copy()
        bottom[:, vidx, 3 + vidx] += -2.0 * drag * np.abs(v)
        J[:, 3:6, :] = bottom / mass[:, :, None]
        return J

    def drift_jac_u(x, u, xi):
        J = np.zeros((x.shape[0], 6, 3))
        J[:, 3:6, :] = eye3 / xi[:, 0:1, None]
        return J

    def diffusion(x, u, xi):
        sig = np.zeros((x.shape[0], 6, 6))
        sig[:, 3 + vidx, 3 + vidx] = beta_sig / xi[:, 0:1]
        return sig

    def running_cost(x, u):
        return np.full(x.shape[0], u @ R @ u)

    def running_cost_grad_x(x, u):
        return np.zeros((x.shape[0], 6))

    def running_cost_grad_u(x, u):
        return np.tile(2.0 * R @ u, (x.shape[0], 1))

    def terminal_eq(x):
        return x - goal

    def terminal_eq_jac(x):
        return np.broadcast_to(np.eye(6), (x.shape[0], 6, 6)).copy()

    problem = ProblemDefinition(
        n=6,
        m=3,
        q=param_low.size,
        horizon=config.horizon,
        nodes=config.nodes,
        control_lower=-config.control_bound * np.ones(3),
        control_upper=config.control_bound * np.ones(3),
        drift=drift,
        drift_jac_x=drift_jac_x,
        drift_jac_u=drift_jac_u,
        diffusion=diffusion,
        running_cost=running_cost,
        running_cost_grad_x=running_cost_grad_x,
        running_cost_grad_u=running_cost_grad_u,
        running_cost_hess_u=2.0 * R,
        n_constraints=N,
        constraints=cons_fn,
        constraints_grad_x=grads_fn,
        first_constraint_node=0,  # deterministic x0: node 0 is certain
        n_eq=6,
        terminal_eq=terminal_eq,
        terminal_eq_jac=terminal_eq_jac,
    )
    return ScenarioProblem(
        name="drone",
        problem=problem,
        initial_state=Fixed(tuple(x0)),
        parameters=UniformBox(tuple(param_low), tuple(param_high)),
        default_alpha=config.alpha,
        solver_overrides={"trust_region_weight": 0.05, "trust_region_radius": 3.0},
    )


# ---------------------------------------------------------------------------
# autonomous driving with a pedestrian
#
# State x = (ego, ped) in R^8 with ego = (px, py, speed, heading) and
# ped = (px, py, vx, vy); control u = (accel, turn rate). The pedestrian
# relaxes toward its desired velocity and is pushed away from the ego
# (repulsive interaction; larger omega_2 avoids the car more actively).


@dataclass(frozen=True)
class DrivingScenarioConfig:
    """Ego drives +x toward its goal; the pedestrian walks head-on along the
    lane edge (y approx -0.5), so separation is resolved by a lateral berth
    whose width scales with the risk level."""

    ego_initial: tuple = (0.0, 0.0, 1.2, 0.0)
    ped_mean: tuple = (3.2, -0.5, -0.5, 0.0)     # position + velocity mean
    ped_cov_diag: tuple = (0.0144, 0.0144, 0.004, 0.004)
    personality_low: tuple = (1.0, 0.05)         # (omega_1, omega_2)
    personality_high: tuple = (1.4, 0.25)
    desired_speed: float = 0.5                   # m/s
    desired_direction: tuple = (-1.0, 0.0)
    ped_diffusion: float = 0.11                  # velocity diffusion, m/s per sqrt(s)
    separation: float = 0.75                     # d_sep, m
    goal: tuple = (6.0, 0.0)                     # ego destination
    effort_weight: tuple = ((1.0, 0.0), (0.0, 2.0))
    horizon: float = 5.0                         # s
    nodes: int = 20
    alpha: float = 0.02
    accel_bound: float = 2.5                     # m/s^2
    turn_bound: float = 1.2                      # rad/s
    force_smoothing: float = 1e-3                # m, keeps the force C^1


def build_driving_problem(config: DrivingScenarioConfig) -> ScenarioProblem:
    if config.separation <= 0:
        raise ConfigurationError("separation distance must be positive")
    R = np.asarray(config.effort_weight, dtype=float)
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise ConfigurationError("effort weight must be symmetric positive definite")
    e_dir = np.asarray(config.desired_direction, dtype=float)
    e_dir = e_dir / np.linalg.norm(e_dir)
    v_des = config.desired_speed * e_dir
    goal = np.asarray(config.goal, dtype=float)
    d_sep = config.separation
    sig_ped = config.ped_diffusion
    delta2 = config.force_smoothing**2
    eye2 = np.eye(2)

    def drift(x, u, xi):
        w1, w2 = xi[:, 0:1], xi[:, 1:2]
        speed, heading = x[:, 2], x[:, 3]
        r = x[:, 4:6] - x[:, 0:2]                       # ego -> ped
        s = np.sqrt(np.sum(r**2, axis=1, keepdims=True) + delta2)
        out = np.empty_like(x)
        out[:, 0] = speed * np.cos(heading)
        out[:, 1] = speed * np.sin(heading)
        out[:, 2] = u[0]
        out[:, 3] = u[1]
        out[:, 4:6] = x[:, 6:8]
        out[:, 6:8] = w1 * (v_des - x[:, 6:8]) + w2 * r / s
        return out

    def drift_jac_x(x, u, xi):
        M = x.shape[0]
        w1, w2 = xi[:, 0], xi[:, 1]
        speed, heading = x[:, 2], x[:, 3]
        r = x[:, 4:6] - x[:, 0:2]
        s2 = np.sum(r**2, axis=1) + delta2
        s = np.sqrt(s2)
        # d(r/s)/dr = I/s - r r^T / s^3
        D = eye2[None] / s[:, None, None] - np.einsum("mi,mj->mij", r, r) / s[:, None, None] ** 3
        J = np.zeros((M, 8, 8))
        J[:, 0, 2] = np.cos(heading)
        J[:, 0, 3] = -speed * np.sin(heading)
        J[:, 1, 2] = np.sin(heading)
        J[:, 1, 3] = speed * np.cos(heading)
        J[:, 4, 6] = 1.0
        J[:, 5, 7] = 1.0
        wD = w2[:, None, None] * D
        J[:, 6:8, 4:6] = wD
        J[:, 6:8, 0:2] = -wD
        J[:, 6, 6] = -w1
        J[:, 7, 7] = -w1
        return J

    def drift_jac_u(x, u, xi):
        J = np.zeros((x.shape[0], 8, 2))
        J[:, 2, 0] = 1.0
        J[:, 3, 1] = 1.0
        return J

    def diffusion(x, u, xi):
        sig = np.zeros((x.shape[0], 8, 8))
        sig[:, 6, 6] = sig_ped
        sig[:, 7, 7] = sig_ped
        return sig

    def running_cost(x, u):
        return np.full(x.shape[0], u @ R @ u)

    def running_cost_grad_x(x, u):
        return np.zeros((x.shape[0], 8))

    def running_cost_grad_u(x, u):
        return np.tile(2.0 * R @ u, (x.shape[0], 1))

    def constraints(x, xi):
        d = np.linalg.norm(x[:, 0:2] - x[:, 4:6], axis=1)
        return (d_sep - d)[:, None]

    def constraints_grad_x(x, xi):
        w = x[:, 0:2] - x[:, 4:6]
        d = np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-9)
        g = np.zeros((x.shape[0], 1, 8))
        g[:, 0, 0:2] = -w / d
        g[:, 0, 4:6] = w / d
        return g

    def terminal_eq(x):
        return x[:, 0:2] - goal

    def terminal_eq_jac(x):
        J = np.zeros((x.shape[0], 2, 8))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        return J

    ped_cov = np.diag(config.ped_cov_diag)
    x0_mean = np.concatenate([config.ego_initial, config.ped_mean])
    x0_cov = np.zeros((8, 8))
    x0_cov[4:8, 4:8] = ped_cov

    problem = ProblemDefinition(
        n=8,
        m=2,
        q=2,
        horizon=config.horizon,
        nodes=config.nodes,
        control_lower=np.array([-config.accel_bound, -config.turn_bound]),
        control_upper=np.array([config.accel_bound, config.turn_bound]),
        drift=drift,
        drift_jac_x=drift_jac_x,
        drift_jac_u=drift_jac_u,
        diffusion=diffusion,
        running_cost=running_cost,
        running_cost_grad_x=running_cost_grad_x,
        running_cost_grad_u=running_cost_grad_u,
        running_cost_hess_u=2.0 * R,
        n_constraints=1,
        constraints=constraints,
        constraints_grad_x=constraints_grad_x,
        first_constraint_node=1,  # uncertain ped start: node 0 is control-independent
        n_eq=2,
        terminal_eq=terminal_eq,
        terminal_eq_jac=terminal_eq_jac,
    )
    return ScenarioProblem(
        name="driving",
        problem=problem,
        initial_state=GaussianVector(tuple(x0_mean), tuple(map(tuple, x0_cov))),
        parameters=UniformBox(tuple(config.personality_low), tuple(config.personality_high)),
        default_alpha=config.alpha,
        solver_overrides={"trust_region_weight": 0.1, "trust_region_radius": 0.4},
    )


SCENARIO_BUILDERS = {
    "drone": (DroneScenarioConfig, build_drone_problem),
    "driving": (DrivingScenarioConfig, build_driving_problem),
}
