"""Sinkhorn Descent: particle push-forward along the RKHS functional gradient.

One step moves every atom of the current measure alpha by
``x -> x - eta * ds(x)`` where

    xi(x) = mean_k grad f_{alpha, beta_k}(x) - grad f_{alpha, alpha}(x)
    ds(y) = sum_j w_j xi(x_j) k(x_j, y)

and the discrepancy (KSBD) is the squared RKHS norm of ``ds``.
"""

from __future__ import annotations

import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BacktrackingFailed, DimensionMismatch, NumericalError, ValidationError
from .measures import Box, DiscreteMeasure, GroundCost, RbfKernel
from .sinkhorn import (
    SinkhornConfig,
    SinkhornPotentials,
    dual_value,
    potential_gradient,
    solve_potentials,
    solve_symmetric_potential,
)

log = logging.getLogger(__name__)

MAX_HALVINGS = 20


@dataclass(frozen=True, eq=False)
class BarycenterProblem:
    sources: tuple
    cost: GroundCost
    kernel: RbfKernel
    gamma: float
    box: Box
    _self_ot: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValidationError("need at least one source measure")
        d = self.sources[0].dim
        if any(s.dim != d for s in self.sources):
            raise DimensionMismatch("all sources must share one dimension")
        if self.box.dim != d:
            raise DimensionMismatch(f"box has dimension {self.box.dim}, sources have {d}")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        for k, s in enumerate(self.sources):
            if not self.box.contains(s.points, atol=1e-9):
                raise ValidationError(f"source {k} has atoms outside the domain box")

    @classmethod
    def build(cls, sources, gamma, bandwidth, box=None, cost_kind="sqeuclidean"):
        """Problem with the cost constants derived from ``box`` (default: padded bounding box)."""
        if len({s.dim for s in sources}) > 1:
            raise DimensionMismatch("all sources must share one dimension")
        box = box if box is not None else Box.around(sources)
        return cls(tuple(sources), GroundCost.for_box(box, cost_kind), RbfKernel(bandwidth), gamma, box)

    @property
    def n(self) -> int:
        return len(self.sources)

    @property
    def dim(self) -> int:
        return self.sources[0].dim

    def source_self_ot(self, cfg: SinkhornConfig) -> np.ndarray:
        """``OT(beta_k, beta_k)`` for every source, cached per solver setting."""
        key = (cfg.gamma, cfg.tolerance, cfg.symmetric_damping)
        if key not in self._self_ot:
            vals = []
            for s in self.sources:
                pot = solve_symmetric_potential(s, self.cost, cfg)
                vals.append(2.0 * float(s.weights @ pot.f))
            self._self_ot[key] = np.array(vals)
        return self._self_ot[key]


@dataclass(frozen=True)
class DescentConfig:
    step_size: float = 0.1
    max_steps: int = 100
    ksbd_stop: float = 0.0
    backtracking: bool = True
    sinkhorn: SinkhornConfig | None = None
    seed: int = 0
    minibatch: int | None = None
    workers: int = 1

    def __post_init__(self):
        if not (self.step_size >= 0 and math.isfinite(self.step_size)):
            raise ValidationError("step_size must be finite and >= 0")
        if self.max_steps < 0:
            raise ValidationError("max_steps must be >= 0")
        if not self.ksbd_stop >= 0:
            raise ValidationError("ksbd_stop must be >= 0")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValidationError("minibatch must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


def solver_config(problem: BarycenterProblem, cfg: SinkhornConfig | None) -> SinkhornConfig:
    base = cfg if cfg is not None else SinkhornConfig(gamma=problem.gamma)
    return base if base.gamma == problem.gamma else replace(base, gamma=problem.gamma)


@dataclass(frozen=True, eq=False)
class DescentDirection:
    xi: np.ndarray
    ds: np.ndarray
    objective: float = math.nan
    potentials: tuple = ()


@dataclass(frozen=True)
class TraceRecord:
    step: int
    objective: float
    ksbd: float
    step_size: float
    sinkhorn_sweeps: int
    wall_ms: float


TRACE_HEADER = "step,objective,ksbd,step_size,sinkhorn_sweeps,wall_ms"


@dataclass
class DescentTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def ksbds(self) -> np.ndarray:
        return np.array([r.ksbd for r in self.records])

    @property
    def step_sizes(self) -> np.ndarray:
        return np.array([r.step_size for r in self.records])

    def to_csv(self, include_wall_time: bool = True) -> str:
        from .measures import format_float

        buf = io.StringIO()
        cols = TRACE_HEADER.split(",")
        if not include_wall_time:
            cols = cols[:-1]
        buf.write(",".join(cols) + "\n")
        for r in self.records:
            row = [str(r.step), format_float(r.objective), format_float(r.ksbd),
                   format_float(r.step_size), str(r.sinkhorn_sweeps)]
            if include_wall_time:
                row.append(format(r.wall_ms, ".3f"))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DescentTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != TRACE_HEADER:
            raise ValidationError(f"trace header must be {TRACE_HEADER!r}")
        trace = cls()
        for ln in lines[1:]:
            s, obj, k, eta, sw, ms = ln.split(",")
            trace.append(TraceRecord(int(s), float(obj), float(k), float(eta), int(sw), float(ms)))
        return trace


# --------------------------------------------------------------------------
# evaluation of the objective and its functional gradient


@dataclass(eq=False)
class _State:
    alpha: DiscreteMeasure
    objective: float
    source_pots: list
    self_pot: SinkhornPotentials
    cost_matrices: list
    self_cost: np.ndarray
    sweeps: int


def _annotated(exc, k):
    exc.args = (f"source {k}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
    exc.source_index = k
    return exc


def _evaluate(alpha, problem, scfg, warm: _State | None = None, workers: int = 1) -> _State:
    if alpha.dim != problem.dim:
        raise DimensionMismatch(f"measure has dimension {alpha.dim}, problem has {problem.dim}")
    cost = problem.cost

    def solve_one(k):
        beta = problem.sources[k]
        C = cost.matrix(alpha.points, beta.points)
        init = warm.source_pots[k] if warm is not None else None
        try:
            pot = solve_potentials(alpha, beta, cost, scfg, init=init, cost_matrix=C)
        except NumericalError as exc:
            raise _annotated(exc, k)
        return pot, C

    if workers > 1 and problem.n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(solve_one, range(problem.n)))
    else:
        solved = [solve_one(k) for k in range(problem.n)]

    C_self = cost.matrix(alpha.points, alpha.points)
    try:
        self_pot = solve_symmetric_potential(
            alpha, cost, scfg, init=warm.self_pot if warm is not None else None, cost_matrix=C_self
        )
    except NumericalError as exc:
        exc.args = (f"self term: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise

    pots = [p for p, _ in solved]
    ot_ab = np.array([dual_value(p, alpha, b) for p, b in zip(pots, problem.sources)])
    ot_aa = 2.0 * float(alpha.weights @ self_pot.f)
    ot_bb = problem.source_self_ot(scfg)
    objective = float(np.mean(ot_ab - 0.5 * ot_aa - 0.5 * ot_bb))
    sweeps = sum(p.iterations_used for p in pots) + self_pot.iterations_used
    return _State(alpha, objective, pots, self_pot, [C for _, C in solved], C_self, sweeps)


def _direction(state: _State, problem, minibatch=None, rng=None) -> DescentDirection:
    alpha, cost = state.alpha, problem.cost
    grads = [
        potential_gradient(p, alpha, b, cost, minibatch=minibatch, rng=rng, cost_matrix=C)
        for p, b, C in zip(state.source_pots, problem.sources, state.cost_matrices)
    ]
    self_grad = potential_gradient(state.self_pot, alpha, alpha, cost, cost_matrix=state.self_cost)
    xi = np.mean(grads, axis=0) - self_grad
    ds = problem.kernel.gram(alpha.points) @ (alpha.weights[:, None] * xi)
    return DescentDirection(xi, ds, state.objective, tuple(state.source_pots) + (state.self_pot,))


def _warm_state(alpha, warm):
    if warm is None:
        return None
    if isinstance(warm, DescentDirection):
        pots = list(warm.potentials)
        return _State(alpha, math.nan, pots[:-1], pots[-1], [], None, 0)
    return warm


def functional_gradient(alpha, problem, cfg: SinkhornConfig | None = None, warm=None,
                        minibatch=None, rng=None) -> DescentDirection:
    """Descent direction at ``alpha``: ``xi`` and the RKHS gradient ``ds`` at every atom.

    ``warm`` may be a previous ``DescentDirection`` for a measure with the
    same atom count; its potentials seed the solves.
    """
    scfg = solver_config(problem, cfg)
    state = _evaluate(alpha, problem, scfg, _warm_state(alpha, warm))
    return _direction(state, problem, minibatch, rng)


def objective(alpha, problem, cfg: SinkhornConfig | None = None) -> float:
    """Barycenter objective: mean Sinkhorn divergence from ``alpha`` to the sources."""
    return _evaluate(alpha, problem, solver_config(problem, cfg)).objective


def ksbd(alpha: DiscreteMeasure, direction: DescentDirection, kernel: RbfKernel) -> float:
    """``sum_ij w_i w_j <xi_i, xi_j> k(x_i, x_j)``, clamped at zero."""
    xi = np.asarray(direction.xi)
    if xi.shape != alpha.points.shape:
        raise DimensionMismatch(f"direction has shape {xi.shape}, measure has {alpha.points.shape}")
    wxi = alpha.weights[:, None] * xi
    val = float(np.sum(wxi * (kernel.gram(alpha.points) @ wxi)))
    return max(val, 0.0)


def default_step_size(problem: BarycenterProblem, d: int | None = None) -> float:
    """Step size bound guaranteeing monotone descent, with M_H = 1 for the RBF kernel."""
    d = problem.dim if d is None else d
    c, gamma = problem.cost, problem.gamma
    L_f = 4 * c.G_c**2 / gamma + c.L_c
    with np.errstate(over="ignore"):
        L_T = 2 * c.G_c**2 * float(np.exp(3 * c.M_c / gamma)) / gamma
    eta = min(1.0 / (8 * L_f), 1.0 / (8 * math.sqrt(d) * L_T))
    return max(eta, 1e-12)


# --------------------------------------------------------------------------
# steps and the outer loop


@dataclass(frozen=True)
class StepRecord:
    objective_before: float
    objective_after: float
    ksbd_before: float
    step_size_used: float
    sinkhorn_sweeps: int
    wall_time: float
    halvings: int = 0


def _push(state, direction, problem, eta):
    moved = problem.box.clamp(state.alpha.points - eta * direction.ds)
    return state.alpha.moved_to(moved)


def _step(state, direction, problem, cfg, scfg):
    t0 = time.perf_counter()
    eta = cfg.step_size
    attempts = MAX_HALVINGS + 1 if cfg.backtracking else 1
    sweeps = 0
    k = ksbd(state.alpha, direction, problem.kernel)
    # a predicted decrease below solver precision cannot be confirmed: stationary
    if cfg.backtracking and eta * k <= 10 * scfg.tolerance * max(1.0, abs(state.objective)):
        rec = StepRecord(state.objective, state.objective, k, 0.0, 0, time.perf_counter() - t0, 0)
        return state, rec
    for h in range(attempts):
        cand = _evaluate(_push(state, direction, problem, eta), problem, scfg, warm=state, workers=cfg.workers)
        sweeps += cand.sweeps
        if not cfg.backtracking or cand.objective <= state.objective:
            rec = StepRecord(state.objective, cand.objective, k, eta, sweeps, time.perf_counter() - t0, h)
            return cand, rec
        eta *= 0.5
    raise BacktrackingFailed(
        f"objective did not decrease after {MAX_HALVINGS} halvings "
        f"(from eta={cfg.step_size:g}, objective {state.objective:.12g})"
    )


def _rng(cfg, t):
    return np.random.default_rng([cfg.seed, t]) if cfg.minibatch is not None else None


def sd_step(alpha: DiscreteMeasure, problem: BarycenterProblem, cfg: DescentConfig):
    """One push-forward step from ``alpha``; returns ``(new_measure, StepRecord)``."""
    scfg = solver_config(problem, cfg.sinkhorn)
    state = _evaluate(alpha, problem, scfg, workers=cfg.workers)
    direction = _direction(state, problem, cfg.minibatch, _rng(cfg, 0))
    new_state, rec = _step(state, direction, problem, cfg, scfg)
    return new_state.alpha, rec


def run_sd(initial: DiscreteMeasure, problem: BarycenterProblem, cfg: DescentConfig):
    """Run Sinkhorn Descent; returns ``(final_measure, DescentTrace)``.

    The trace has one record per visited measure (initial included).  Stops
    early once KSBD <= ``cfg.ksbd_stop``.  On a solver or backtracking error
    the exception carries ``.trace`` and ``.measure`` (last accepted state).
    """
    scfg = solver_config(problem, cfg.sinkhorn)
    trace = DescentTrace()
    state = None
    t0 = time.perf_counter()
    try:
        state = _evaluate(initial, problem, scfg, workers=cfg.workers)
        direction = _direction(state, problem, cfg.minibatch, _rng(cfg, 0))
        k = ksbd(state.alpha, direction, problem.kernel)
        trace.append(TraceRecord(0, state.objective, k, 0.0, state.sweeps, 1e3 * (time.perf_counter() - t0)))
        for t in range(1, cfg.max_steps + 1):
            if k <= cfg.ksbd_stop:
                log.info("KSBD %.3e <= %.3e at step %d, stopping", k, cfg.ksbd_stop, t - 1)
                break
            t0 = time.perf_counter()
            state, rec = _step(state, direction, problem, cfg, scfg)
            direction = _direction(state, problem, cfg.minibatch, _rng(cfg, t))
            k = ksbd(state.alpha, direction, problem.kernel)
            trace.append(TraceRecord(t, state.objective, k, rec.step_size_used, rec.sinkhorn_sweeps,
                                     1e3 * (time.perf_counter() - t0)))
            log.debug("step %d objective %.10g ksbd %.3e eta %.3g", t, state.objective, k, rec.step_size_used)
    except NumericalError as exc:
        exc.trace = trace
        exc.measure = state.alpha if state is not None else initial
        raise
    return state.alpha, trace
