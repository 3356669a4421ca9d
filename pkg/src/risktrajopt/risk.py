"""Empirical value-at-risk, average value-at-risk, and epigraph feasibility.

For a sample Z_1..Z_M and level alpha in (0,1):

  var(Z)  = inf{ t : #{i : Z_i > t} / M <= alpha }
  avar(Z) = min_t  t + (1 / (alpha M)) sum_i max(Z_i - t, 0)

The avar objective is piecewise linear in t with kinks only at sample
values, and its minimum is attained at t* = var(Z), so both estimators are
exact order-statistic computations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RiskLevel:
    """Risk level alpha strictly inside (0, 1)."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"risk level must lie in (0, 1), got {self.alpha}")


def _validated(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empirical sample must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("empirical sample must be finite")
    return v


def empirical_var(values, level: RiskLevel) -> float:
    """Empirical (1-alpha)-quantile: smallest sample value with tail mass <= alpha."""
    v = np.sort(_validated(values))
    M = v.size
    # tail count strictly above each sorted value (right-continuous in t)
    counts_above = M - np.searchsorted(v, v, side="right")
    feasible = counts_above / M <= level.alpha
    return float(v[np.argmax(feasible)])  # sorted, so first True is the inf


def empirical_avar(values, level: RiskLevel) -> tuple[float, float]:
    """Empirical average value-at-risk and its minimizing t (= empirical var).

    Evaluated in tail-average form (sum of the atoms above t* plus the
    fractional weight on t*, divided by alpha*M), which is algebraically
    identical to the objective at t* but avoids the cancellation of
    t* + sum(v - t*) when t* sits far below the result.
    """
    v = _validated(values)
    t_star = empirical_var(v, level)
    k = level.alpha * v.size
    above = v[v > t_star]
    value = (above.sum() + (k - above.size) * t_star) / k
    return float(value), t_star


def epigraph_residuals(
    constraint_values,
    t: float,
    y,
    level: RiskLevel,
) -> tuple[float, np.ndarray, float]:
    """Residuals of the epigraph form of the sampled avar constraint.

    Parameters
    ----------
    constraint_values : (M, K, N) array
        Raw constraint evaluations G_j at each scenario i and grid node k.
    t : scalar risk variable.
    y : (M,) auxiliary per-scenario variables.
    level : risk level alpha.

    Returns
    -------
    aggregate : M * alpha * t + sum(y); the shared budget row.
    per_scenario_slack : (M,) worst violation of the per-scenario rows
        max(0, max_jk G - t - y_i, -y_i).
    pointwise_max_violation : max over scenarios of per_scenario_slack.

    (t, y) is feasible for the epigraph constraint set iff aggregate <= 0
    and every per-scenario slack is zero.
    """
    G = np.asarray(constraint_values, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if G.ndim != 3:
        raise ValueError(f"constraint tensor must be (M, K, N), got shape {G.shape}")
    M = G.shape[0]
    if y.shape != (M,):
        raise ValueError(f"y must have shape ({M},), got {y.shape}")
    if not np.all(np.isfinite(y)) or not np.isfinite(t):
        raise ValueError("t and y must be finite")

    worst = G.reshape(M, -1).max(axis=1)  # per-scenario max over nodes and constraints
    aggregate = M * level.alpha * t + y.sum()
    per_scenario_slack = np.maximum(np.maximum(worst - t - y, -y), 0.0)
    return float(aggregate), per_scenario_slack, float(per_scenario_slack.max())
