import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_measure
from oracles import half_sq, primal_entropic_ot_2x2, soft_min_potential
from sinkhorn_descent.errors import MaxIterations, NonFinite, ValidationError
from sinkhorn_descent.measures import Box, CostKind, GroundCost, new_discrete_measure
from sinkhorn_descent.sinkhorn import (
    SinkhornConfig,
    divergence_terms,
    h_row_sums,
    ot_gamma,
    potential_gradient,
    self_ot_gamma,
    sinkhorn_divergence,
    sinkhorn_map,
    solve_potentials,
    solve_symmetric_potential,
)

COST = GroundCost(domain_radius=2.0)
UNIT_BOX = Box.cube(0.0, 1.0, 3)


def two_point():
    return new_discrete_measure([[0.0], [1.0]])


# --------------------------------------------------------------------------
# sinkhorn_map


def test_map_single_atom_is_cost():
    x = new_discrete_measure([[0.3, -0.2]])
    ys = np.array([[1.0, 1.0], [0.3, -0.2], [-2.0, 0.5]])
    out = sinkhorn_map([0.0], x, ys, COST, 0.7)
    np.testing.assert_allclose(out, [half_sq(x.points[0], y) for y in ys], rtol=1e-14)


def test_map_constant_shift():
    rng = np.random.default_rng(0)
    a = random_measure(rng, 6, 2)
    f = rng.standard_normal(6)
    q = rng.random((4, 2))
    np.testing.assert_allclose(
        sinkhorn_map(f + 3.25, a, q, COST, 0.3), sinkhorn_map(f, a, q, COST, 0.3) - 3.25, atol=1e-13
    )


def test_map_two_point_value():
    out = sinkhorn_map([0.0, 0.0], two_point(), [[0.0]], COST, 1.0)
    assert out[0] == pytest.approx(-math.log((1 + math.exp(-0.5)) / 2), abs=1e-14)
    assert out[0] == pytest.approx(0.21907, abs=1e-5)


def test_map_no_overflow_at_tiny_gamma():
    a = two_point()
    out = sinkhorn_map([0.0, 0.0], a, [[0.0], [0.5], [3.0]], COST, 1e-4)
    assert np.all(np.isfinite(out))
    # soft-min approaches the hard min  - gamma log(w)
    assert out[0] == pytest.approx(1e-4 * math.log(2), abs=1e-12)


def test_map_rejects_nan():
    with pytest.raises(NonFinite):
        sinkhorn_map([np.nan, 0.0], two_point(), [[0.0]], COST, 1.0)
    with pytest.raises(NonFinite):
        sinkhorn_map([0.0, 0.0], two_point(), [[np.inf]], COST, 1.0)


# --------------------------------------------------------------------------
# potentials


def test_single_atoms_potentials():
    a, b = new_discrete_measure([[0.0, 0.0]]), new_discrete_measure([[1.0, 2.0]])
    pot = solve_potentials(a, b, COST, SinkhornConfig(gamma=0.5, tolerance=1e-12))
    assert pot.f[0] == 0.0
    assert pot.g[0] == pytest.approx(2.5, abs=1e-12)


def test_asymmetric_on_identical_matches_symmetric():
    rng = np.random.default_rng(1)
    a = random_measure(rng, 8, 2)
    cfg = SinkhornConfig(gamma=0.2, tolerance=1e-10)
    assert ot_gamma(a, a, COST, cfg) == pytest.approx(self_ot_gamma(a, COST, cfg), abs=2e-10)


def test_two_point_residual():
    a = two_point()
    cfg = SinkhornConfig(gamma=1.0, tolerance=1e-10)
    pot = solve_potentials(a, a, COST, cfg)
    assert pot.residual <= 1e-10
    assert np.max(np.abs(pot.f - sinkhorn_map(pot.g, a, a.points, COST, 1.0))) <= 1e-10
    assert np.max(np.abs(pot.g - sinkhorn_map(pot.f, a, a.points, COST, 1.0))) <= 1e-10


def test_symmetric_single_atom_is_zero():
    pot = solve_symmetric_potential(new_discrete_measure([[4.0, -1.0]]), COST, SinkhornConfig(gamma=0.3))
    assert pot.f[0] == pytest.approx(0.0, abs=1e-12)


def test_symmetric_translation_invariant():
    rng = np.random.default_rng(2)
    a = random_measure(rng, 7, 2)
    shifted = new_discrete_measure(a.points + np.array([3.0, -1.5]), a.weights)
    cfg = SinkhornConfig(gamma=0.2, tolerance=1e-11)
    f1 = solve_symmetric_potential(a, COST, cfg).f
    f2 = solve_symmetric_potential(shifted, COST, cfg).f
    np.testing.assert_allclose(f1, f2, atol=1e-9)


def test_symmetric_two_point_residual():
    a = two_point()
    pot = solve_symmetric_potential(a, COST, SinkhornConfig(gamma=1.0, tolerance=1e-10))
    assert pot.residual <= 1e-10
    assert np.max(np.abs(pot.f - sinkhorn_map(pot.f, a, a.points, COST, 1.0))) <= 1e-10


def test_max_iterations_carries_last_iterate():
    rng = np.random.default_rng(3)
    a, b = random_measure(rng, 10, 2), random_measure(rng, 10, 2)
    with pytest.raises(MaxIterations) as info:
        solve_potentials(a, b, COST, SinkhornConfig(gamma=0.01, tolerance=1e-14, max_iterations=3))
    assert info.value.last is not None and info.value.last.f.shape == (10,)
    assert info.value.residual > 0
    with pytest.raises(MaxIterations):
        solve_symmetric_potential(a, COST, SinkhornConfig(gamma=0.01, tolerance=1e-14, max_iterations=2))


def test_config_validation():
    with pytest.raises(ValidationError):
        SinkhornConfig(gamma=0.0)
    with pytest.raises(ValidationError):
        SinkhornConfig(gamma=1.0, tolerance=-1)
    with pytest.raises(ValidationError):
        SinkhornConfig(gamma=1.0, symmetric_damping=0.0)


# --------------------------------------------------------------------------
# OT values and the divergence


def test_ot_dirac_cases():
    x, y = new_discrete_measure([[0.1, 0.2]]), new_discrete_measure([[0.7, -0.4]])
    cfg = SinkhornConfig(gamma=0.05, tolerance=1e-10)
    assert ot_gamma(x, y, COST, cfg) == pytest.approx(0.36, abs=1e-10)
    assert ot_gamma(x, x, COST, cfg) == pytest.approx(0.0, abs=1e-12)
    assert sinkhorn_divergence(x, y, COST, cfg) == pytest.approx(0.36, abs=1e-10)


def test_ot_two_point_matches_primal_oracle():
    a = two_point()
    cfg = SinkhornConfig(gamma=1.0, tolerance=1e-12)
    C = np.array([[0.0, 0.5], [0.5, 0.0]])
    want = primal_entropic_ot_2x2(a.weights, a.weights, C, 1.0)
    assert ot_gamma(a, a, COST, cfg) == pytest.approx(want, abs=1e-8)


def test_divergence_self_is_zero():
    rng = np.random.default_rng(4)
    a = random_measure(rng, 12, 3)
    cfg = SinkhornConfig(gamma=0.1, tolerance=1e-10)
    assert abs(sinkhorn_divergence(a, a, COST, cfg)) <= 4 * 1e-10 * COST.M_c


def test_divergence_symmetry_random_10_point():
    rng = np.random.default_rng(5)
    cfg = SinkhornConfig(gamma=0.1, tolerance=1e-10)
    for _ in range(5):
        a, b = random_measure(rng, 10, 2), random_measure(rng, 10, 2)
        assert abs(sinkhorn_divergence(a, b, COST, cfg) - sinkhorn_divergence(b, a, COST, cfg)) <= 1e-8


def test_divergence_terms_identity():
    rng = np.random.default_rng(6)
    a, b = random_measure(rng, 5, 2), random_measure(rng, 9, 2)
    cfg = SinkhornConfig(gamma=0.3)
    ab, aa, bb = divergence_terms(a, b, COST, cfg)
    assert sinkhorn_divergence(a, b, COST, cfg) == pytest.approx(ab - 0.5 * aa - 0.5 * bb, abs=1e-14)


def test_euclidean_cost_divergence():
    x, y = new_discrete_measure([[0.0, 0.0]]), new_discrete_measure([[3.0, 4.0]])
    cost = GroundCost(CostKind.EUCLIDEAN, domain_radius=5.0)
    assert sinkhorn_divergence(x, y, cost, SinkhornConfig(gamma=0.1)) == pytest.approx(5.0, abs=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 8), st.integers(1, 3),
       st.floats(0.05, 5.0))
def test_divergence_nonnegative(seed, n, m, d, gamma):
    rng = np.random.default_rng(seed)
    a, b = random_measure(rng, n, d), random_measure(rng, m, d)
    cost = GroundCost.for_box(Box.cube(0.0, 1.0, d))
    tol = 1e-9
    assert sinkhorn_divergence(a, b, cost, SinkhornConfig(gamma=gamma, tolerance=tol)) >= -10 * tol * cost.M_c


def test_merge_invariance():
    rng = np.random.default_rng(7)
    a, b = random_measure(rng, 6, 2), random_measure(rng, 5, 2)
    split_pts = np.vstack([a.points, a.points[:2]])
    split_w = np.concatenate([a.weights[:2] * 0.3, a.weights[2:], a.weights[:2] * 0.7])
    split = new_discrete_measure(split_pts, split_w)
    cfg = SinkhornConfig(gamma=0.2, tolerance=1e-10)
    assert ot_gamma(split, b, COST, cfg) == pytest.approx(ot_gamma(a, b, COST, cfg), abs=1e-9)


def test_reduction_order_independence():
    rng = np.random.default_rng(8)
    a, b = random_measure(rng, 20, 2), random_measure(rng, 30, 2)
    perm = rng.permutation(30)
    b_perm = new_discrete_measure(b.points[perm], b.weights[perm])
    cfg = SinkhornConfig(gamma=0.1, tolerance=1e-11)
    assert ot_gamma(a, b, COST, cfg) == pytest.approx(ot_gamma(a, b_perm, COST, cfg), abs=1e-12)


# --------------------------------------------------------------------------
# invariants of the solved potentials


@pytest.mark.parametrize("seed", range(6))
def test_potential_invariants(seed):
    rng = np.random.default_rng(100 + seed)
    d = 1 + seed % 3
    cost = GroundCost.for_box(Box.cube(0.0, 1.0, d))
    a, b = random_measure(rng, 4 + seed * 3, d), random_measure(rng, 3 + seed * 4, d)
    tol = 1e-9
    gamma = [0.05, 0.2, 1.0][seed % 3]
    pot = solve_potentials(a, b, cost, SinkhornConfig(gamma=gamma, tolerance=tol))
    assert pot.f[0] == 0.0
    # fixed point
    assert np.max(np.abs(pot.f - sinkhorn_map(pot.g, b, a.points, cost, gamma))) <= 2 * tol
    assert np.max(np.abs(pot.g - sinkhorn_map(pot.f, a, b.points, cost, gamma))) <= 2 * tol
    # boundedness
    assert np.max(np.abs(pot.f)) <= 2 * cost.M_c + 10 * tol
    assert np.max(np.abs(pot.g)) <= 2 * cost.M_c + 10 * tol
    # Lipschitz in x
    D = np.sqrt(((a.points[:, None] - a.points[None]) ** 2).sum(-1))
    assert np.all(np.abs(pot.f[:, None] - pot.f[None]) <= cost.G_c * D + 10 * tol)
    # h-normalization; the row sum is exp(residual / gamma), hence the 1/gamma
    h = h_row_sums(pot, a, b, cost)
    assert np.all(np.abs(h - 1) <= 10 * tol * max(1.0, 1.0 / gamma))


# --------------------------------------------------------------------------
# potential gradients


def test_gradient_dirac_target():
    rng = np.random.default_rng(9)
    a = random_measure(rng, 5, 2)
    y = new_discrete_measure([[0.25, 0.75]])
    pot = solve_potentials(a, y, COST, SinkhornConfig(gamma=0.1))
    np.testing.assert_allclose(potential_gradient(pot, a, y, COST), a.points - y.points[0], atol=1e-13)


def test_gradient_bounded_by_Gc():
    rng = np.random.default_rng(10)
    box = Box.cube(0.0, 1.0, 2)
    cost = GroundCost.for_box(box)
    for gamma in (0.01, 0.1, 1.0):
        a, b = random_measure(rng, 15, 2), random_measure(rng, 20, 2)
        pot = solve_potentials(a, b, cost, SinkhornConfig(gamma=gamma))
        assert np.linalg.norm(potential_gradient(pot, a, b, cost), axis=1).max() <= cost.G_c


def test_gradient_matches_finite_differences_of_extension():
    a = new_discrete_measure([[0.2], [0.9]], [0.4, 0.6])
    b = new_discrete_measure([[0.0], [1.3]], [0.7, 0.3])
    gamma, h = 0.3, 1e-5
    pot = solve_potentials(a, b, COST, SinkhornConfig(gamma=gamma, tolerance=1e-13))
    grad = potential_gradient(pot, a, b, COST)
    for i, x in enumerate(a.points[:, 0]):
        fp = soft_min_potential([x + h], pot.g, b.points, b.weights, gamma, half_sq)
        fm = soft_min_potential([x - h], pot.g, b.points, b.weights, gamma, half_sq)
        fd = (fp - fm) / (2 * h)
        assert abs(grad[i, 0] - fd) <= 1e-5 * abs(fd)


def test_gradient_anchor_invariance():
    rng = np.random.default_rng(11)
    a, b = random_measure(rng, 6, 2), random_measure(rng, 7, 2)
    pot = solve_potentials(a, b, COST, SinkhornConfig(gamma=0.2))
    g1 = potential_gradient(pot, a, b, COST)
    g2 = potential_gradient(pot.shifted(7.5), a, b, COST)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_gradient_euclidean_cost():
    rng = np.random.default_rng(12)
    a, b = random_measure(rng, 4, 2), random_measure(rng, 5, 2)
    cost = GroundCost(CostKind.EUCLIDEAN, domain_radius=1.0)
    pot = solve_potentials(a, b, cost, SinkhornConfig(gamma=0.2, tolerance=1e-12))
    grad = potential_gradient(pot, a, b, cost)
    h = 1e-6
    for i in range(a.n):
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (sinkhorn_map(pot.g, b, a.points[i] + e, cost, 0.2)[0]
                  - sinkhorn_map(pot.g, b, a.points[i] - e, cost, 0.2)[0]) / (2 * h)
            assert grad[i, k] == pytest.approx(fd, abs=1e-7)


def test_minibatch_gradient_is_unbiased_estimate():
    rng = np.random.default_rng(13)
    a, b = random_measure(rng, 3, 2), random_measure(rng, 40, 2)
    pot = solve_potentials(a, b, COST, SinkhornConfig(gamma=0.5, tolerance=1e-11))
    exact = potential_gradient(pot, a, b, COST)
    est = np.mean([potential_gradient(pot, a, b, COST, minibatch=20, rng=np.random.default_rng(s))
                   for s in range(400)], axis=0)
    np.testing.assert_allclose(est, exact, atol=0.03)
