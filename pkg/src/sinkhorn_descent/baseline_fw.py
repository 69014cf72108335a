"""Support-growing Frank-Wolfe baseline with an exhaustive grid search.

Each step adds one Dirac at the grid minimizer of the first variation

    Q(x) = mean_k f_{alpha, beta_k}(x) - f_{alpha, alpha}(x)

and mixes it in with weight rho_t.  Only practical for d <= 3.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from .descent import BarycenterProblem, DescentTrace, TraceRecord, _evaluate, solver_config
from .errors import DimensionTooHigh, ValidationError
from .measures import DiscreteMeasure
from .sinkhorn import SinkhornConfig, SinkhornPotentials, sinkhorn_map

MAX_GRID_DIM = 3


class WeightRule(enum.Enum):
    HARMONIC = "harmonic"
    TWO_OVER_T_PLUS_TWO = "two-over-t-plus-two"

    def rho(self, t: int) -> float:
        """Mixing weight of the new atom at step ``t`` (counted from 1)."""
        if self is WeightRule.HARMONIC:
            return 1.0 / (t + 1)
        return 2.0 / (t + 2)


@dataclass(frozen=True)
class FwConfig:
    grid_resolution: int = 64
    steps: int = 100
    weight_rule: WeightRule = WeightRule.TWO_OVER_T_PLUS_TWO
    sinkhorn: SinkhornConfig | None = None

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValidationError("grid_resolution must be >= 2")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if isinstance(self.weight_rule, str):
            object.__setattr__(self, "weight_rule", WeightRule(self.weight_rule))


def _check_dim(d):
    if d > MAX_GRID_DIM:
        raise DimensionTooHigh(f"grid search limited to d ≤ {MAX_GRID_DIM} (got d={d})")


def _q_values(state, problem, grid_points):
    cost, gamma = problem.cost, problem.gamma
    src = [sinkhorn_map(p.g, b, grid_points, cost, gamma) for p, b in zip(state.source_pots, problem.sources)]
    own = sinkhorn_map(state.self_pot.f, state.alpha, grid_points, cost, gamma)
    return np.mean(src, axis=0) - own, src, own


def fw_linearization(alpha: DiscreteMeasure, problem: BarycenterProblem, grid_points, cfg: SinkhornConfig | None = None):
    """Grid argmin of Q and Q on every grid point.

    Potentials are extended off-support by the soft c-transform.  Ties go to
    the lowest grid index.
    """
    _check_dim(alpha.dim)
    grid = np.atleast_2d(np.asarray(grid_points, dtype=np.float64))
    state = _evaluate(alpha, problem, solver_config(problem, cfg))
    q, _, _ = _q_values(state, problem, grid)
    return grid[int(np.argmin(q))].copy(), q


def _add_atom(alpha, x, rho):
    """``(1 - rho) alpha + rho delta_x``; an exact duplicate atom absorbs the mass."""
    w = (1.0 - rho) * alpha.weights
    hit = np.flatnonzero(np.all(alpha.points == x, axis=1))
    if hit.size:
        w = w.copy()
        w[hit[0]] += rho
        pts = alpha.points
    else:
        pts = np.vstack([alpha.points, x])
        w = np.append(w, rho)
    w = w / w.sum()
    return DiscreteMeasure(pts, w), (int(hit[0]) if hit.size else None)


def _grown_warm(state, idx_new, src_vals, own_val):
    if idx_new is not None:
        return state
    pots = [
        SinkhornPotentials(np.append(p.f, v), p.g, p.gamma, p.iterations_used, p.residual)
        for p, v in zip(state.source_pots, src_vals)
    ]
    f = np.append(state.self_pot.f, own_val)
    self_pot = SinkhornPotentials(f, f, state.self_pot.gamma, 0, np.nan)
    return type(state)(state.alpha, state.objective, pots, self_pot, [], None, 0)


def run_fw(initial: DiscreteMeasure, problem: BarycenterProblem, cfg: FwConfig):
    """Frank-Wolfe over measures; returns ``(final_measure, DescentTrace)``.

    Trace rows carry the objective; ``ksbd`` is NaN and ``step_size`` holds
    the mixing weight rho_t.
    """
    _check_dim(initial.dim)
    scfg = solver_config(problem, cfg.sinkhorn)
    grid = problem.box.grid(cfg.grid_resolution)
    trace = DescentTrace()
    t0 = time.perf_counter()
    state = _evaluate(initial, problem, scfg)
    trace.append(TraceRecord(0, state.objective, math.nan, 0.0, state.sweeps, 1e3 * (time.perf_counter() - t0)))
    for t in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        q, src, own = _q_values(state, problem, grid)
        i = int(np.argmin(q))
        rho = cfg.weight_rule.rho(t)
        alpha, dup = _add_atom(state.alpha, grid[i], rho)
        warm = _grown_warm(state, dup, [s[i] for s in src], own[i])
        state = _evaluate(alpha, problem, scfg, warm=warm)
        trace.append(TraceRecord(t, state.objective, math.nan, rho, state.sweeps, 1e3 * (time.perf_counter() - t0)))
    return state.alpha, trace
