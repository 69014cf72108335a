"""Entropic optimal transport between discrete measures, in the log domain.

Potentials are only ever stored on the supports of their measures.  Off
support, a potential ``f`` for the pair (alpha, beta) is extended by the
soft c-transform ``f(x) := sinkhorn_map(g, beta, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaxIterations, NonFinite, SolverBlowup, ValidationError
from .measures import DiscreteMeasure, GroundCost


@dataclass(frozen=True)
class SinkhornConfig:
    gamma: float
    tolerance: float = 1e-9
    max_iterations: int = 100_000
    symmetric_damping: float = 0.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if not self.tolerance > 0:
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0 < self.symmetric_damping <= 1:
            raise ValidationError("symmetric_damping must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class SinkhornPotentials:
    """Dual potentials sampled on supp(alpha) (``f``) and supp(beta) (``g``)."""

    f: np.ndarray
    g: np.ndarray
    gamma: float
    iterations_used: int
    residual: float

    def shifted(self, c: float) -> "SinkhornPotentials":
        return SinkhornPotentials(self.f + c, self.g - c, self.gamma, self.iterations_used, self.residual)


def _log_weights(measure):
    with np.errstate(divide="ignore"):
        return np.log(measure.weights)


def _softmin(neg_cost_over_gamma, pot, log_w, gamma):
    """``-gamma * log sum_j w_j exp((pot_j - c_ij) / gamma)`` for every row i."""
    z = neg_cost_over_gamma + (log_w + pot / gamma)[None, :]
    m = z.max(axis=1)
    z -= m[:, None]
    np.exp(z, out=z)
    return -gamma * (m + np.log(z.sum(axis=1)))


def _check_finite(*arrays, what="input"):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"{what} contains NaN or Inf")


def sinkhorn_map(f, alpha: DiscreteMeasure, query_points, cost: GroundCost, gamma: float) -> np.ndarray:
    """Soft c-transform of ``f`` (given on supp(alpha)) evaluated at ``query_points``."""
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    f = np.asarray(f, dtype=np.float64)
    q = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
    _check_finite(f, q)
    if f.shape != (alpha.n,):
        raise ValidationError(f"potential has shape {f.shape}, measure has {alpha.n} atoms")
    neg = cost.matrix(q, alpha.points) / -gamma
    return _softmin(neg, f, _log_weights(alpha), gamma)


def solve_potentials(
    alpha: DiscreteMeasure,
    beta: DiscreteMeasure,
    cost: GroundCost,
    cfg: SinkhornConfig,
    init: SinkhornPotentials | None = None,
    cost_matrix=None,
) -> SinkhornPotentials:
    """Alternating log-domain Sinkhorn sweeps for the pair (alpha, beta).

    Each sweep sets ``f <- A(g, beta)`` then ``g <- A(f, alpha)``; it stops
    once a sweep changes ``f`` by at most ``cfg.tolerance`` in sup norm.
    The result is shifted so that ``f`` vanishes at the first atom of alpha.

    ``init`` warm-starts from earlier potentials (its ``g`` must live on supp(beta));
    ``cost_matrix`` (N_alpha x N_beta) skips recomputing the costs.
    """
    if alpha.dim != beta.dim:
        raise ValidationError(f"dimension mismatch: {alpha.dim} vs {beta.dim}")
    gamma = cfg.gamma
    C = cost.matrix(alpha.points, beta.points) if cost_matrix is None else cost_matrix
    neg_ab = C / -gamma
    neg_ba = np.ascontiguousarray(neg_ab.T)
    lw_a, lw_b = _log_weights(alpha), _log_weights(beta)

    # f is a function of g alone, so a warm start only seeds g; the stopping
    # test always compares two f's computed here
    if init is not None and init.g.shape == (beta.n,):
        g = init.g.copy()
    else:
        g = np.zeros(beta.n)
    f = np.zeros(alpha.n)
    have_prev = False

    sweeps = 0
    change = np.inf
    while sweeps < cfg.max_iterations:
        f_new = _softmin(neg_ab, g, lw_b, gamma)
        g = _softmin(neg_ba, f_new, lw_a, gamma)
        sweeps += 1
        if not (np.all(np.isfinite(f_new)) and np.all(np.isfinite(g))):
            raise SolverBlowup(f"non-finite potentials after {sweeps} sweeps (gamma={gamma})")
        change = float(np.max(np.abs(f_new - f))) if have_prev else np.inf
        f, have_prev = f_new, True
        if change <= cfg.tolerance:
            break

    # g = A(f, alpha) holds exactly; measure the other half of the optimality condition
    residual = float(np.max(np.abs(f - _softmin(neg_ab, g, lw_b, gamma))))
    anchor = f[0]
    pot = SinkhornPotentials(f - anchor, g + anchor, gamma, sweeps, residual)
    if change > cfg.tolerance:
        raise MaxIterations(
            f"Sinkhorn did not reach tolerance {cfg.tolerance:g} in {sweeps} sweeps "
            f"(last change {change:.3e})",
            last=pot,
            residual=residual,
        )
    return pot


def solve_symmetric_potential(
    alpha: DiscreteMeasure,
    cost: GroundCost,
    cfg: SinkhornConfig,
    init: SinkhornPotentials | None = None,
    cost_matrix=None,
) -> SinkhornPotentials:
    """Self-transport potential: the unique solution of ``f = A(f, alpha)``.

    Uses the damped update ``f <- (1 - lam) f + lam A(f, alpha)``; the
    residual ``|f - A(f, alpha)|_inf`` is checked before every update.
    """
    gamma, lam = cfg.gamma, cfg.symmetric_damping
    C = cost.matrix(alpha.points, alpha.points) if cost_matrix is None else cost_matrix
    neg = C / -gamma
    lw = _log_weights(alpha)
    if init is not None and init.f.shape == (alpha.n,):
        f = init.f.copy()
    else:
        f = _softmin(neg, np.zeros(alpha.n), lw, gamma)

    it = 0
    while True:
        t = _softmin(neg, f, lw, gamma)
        if not np.all(np.isfinite(t)):
            raise SolverBlowup(f"non-finite symmetric potential after {it} iterations")
        residual = float(np.max(np.abs(f - t)))
        if residual <= cfg.tolerance:
            break
        if it >= cfg.max_iterations:
            raise MaxIterations(
                f"symmetric Sinkhorn did not reach tolerance {cfg.tolerance:g} in {it} iterations",
                last=SinkhornPotentials(f, f, gamma, it, residual),
                residual=residual,
            )
        f = (1.0 - lam) * f + lam * t
        it += 1
    return SinkhornPotentials(f, f.copy(), gamma, it, residual)


def dual_value(pot: SinkhornPotentials, alpha: DiscreteMeasure, beta: DiscreteMeasure) -> float:
    """``<f, alpha> + <g, beta>``: the entropic OT value at optimal potentials."""
    return float(alpha.weights @ pot.f + beta.weights @ pot.g)


def ot_gamma(alpha, beta, cost, cfg) -> float:
    pot = solve_potentials(alpha, beta, cost, cfg)
    return dual_value(pot, alpha, beta)


def self_ot_gamma(alpha, cost, cfg, init=None) -> float:
    pot = solve_symmetric_potential(alpha, cost, cfg, init=init)
    return 2.0 * float(alpha.weights @ pot.f)


def divergence_terms(alpha, beta, cost, cfg):
    """``(OT(alpha, beta), OT(alpha, alpha), OT(beta, beta))``."""
    return ot_gamma(alpha, beta, cost, cfg), self_ot_gamma(alpha, cost, cfg), self_ot_gamma(beta, cost, cfg)


def sinkhorn_divergence(alpha, beta, cost, cfg) -> float:
    ab, aa, bb = divergence_terms(alpha, beta, cost, cfg)
    return ab - 0.5 * aa - 0.5 * bb


def _transport_logits(pot, alpha, beta, cost, cost_matrix=None):
    # log h(x_i, y_j) with g recomputed as A(f, alpha) on supp(beta)
    gamma = pot.gamma
    C = cost.matrix(alpha.points, beta.points) if cost_matrix is None else cost_matrix
    neg = C / -gamma
    g = _softmin(np.ascontiguousarray(neg.T), pot.f, _log_weights(alpha), gamma)
    return neg + (pot.f[:, None] + g[None, :]) / gamma


def h_row_sums(pot, alpha, beta, cost, cost_matrix=None) -> np.ndarray:
    """``sum_j w_j h(x_i, y_j)`` for every atom x_i of alpha; equals 1 at optimality."""
    logits = _transport_logits(pot, alpha, beta, cost, cost_matrix)
    return np.exp(logits + _log_weights(beta)[None, :]).sum(axis=1)


def potential_gradient(
    pot: SinkhornPotentials,
    alpha: DiscreteMeasure,
    beta: DiscreteMeasure,
    cost: GroundCost,
    minibatch: int | None = None,
    rng: np.random.Generator | None = None,
    cost_matrix=None,
) -> np.ndarray:
    """Gradient of the potential f_{alpha,beta} at every atom of alpha, shape (N, d).

    Exact mode takes the expectation of ``grad_x c(x, y)`` over the row of the
    transport plan ``h(x, .) beta``, with each row renormalized: this is the
    exact gradient of the off-support extension and agrees with the raw
    ``h`` weights up to the solver residual.  With ``minibatch=m`` the
    expectation is replaced by a Monte-Carlo average over ``m`` atoms drawn
    from beta.
    """
    if pot.f.shape != (alpha.n,):
        raise ValidationError("potentials do not belong to this alpha")
    if minibatch is not None and minibatch < beta.n:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = rng.choice(beta.n, size=minibatch, replace=True, p=beta.weights)
        C = cost.matrix(alpha.points, beta.points) if cost_matrix is None else cost_matrix
        gamma = pot.gamma
        g = _softmin(np.ascontiguousarray((C / -gamma).T), pot.f, _log_weights(alpha), gamma)
        h = np.exp((pot.f[:, None] + g[idx][None, :] - C[:, idx]) / gamma) / minibatch
        grad = cost.averaged_grad_x(alpha.points, beta.points[idx], h)
    else:
        logits = _transport_logits(pot, alpha, beta, cost, cost_matrix) + _log_weights(beta)[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        plan = np.exp(logits)
        plan /= plan.sum(axis=1, keepdims=True)
        grad = cost.averaged_grad_x(alpha.points, beta.points, plan)
    if not np.all(np.isfinite(grad)):
        raise SolverBlowup("non-finite potential gradient")
    return grad
