import math
from itertools import product

import numpy as np
import pytest
from hypothesis import example, given, strategies as st
from hypothesis.extra.numpy import arrays

from vgmls.gmls import (MultiIndexSet, RankDeficient, WeightScheme, build_local_fit, count_monomials,
                        derivative_at_base, design_matrix, fit, local_coordinates, monomial_gradients)


def naive_monomial(theta_row, alpha):
    out = 1.0
    for t, a in zip(theta_row, alpha):
        out *= t**a
    return out


@pytest.mark.parametrize("d,l", [(1, 4), (2, 0), (2, 3), (2, 5), (3, 4), (4, 2)])
def test_multi_index_counts_and_order(d, l):
    idx = MultiIndexSet(d, l)
    assert idx.m == math.comb(l + d, d) == count_monomials(d, l)
    if d == 2:
        assert idx.m == (l + 2) * (l + 1) // 2
    degs = [sum(a) for a in idx]
    assert degs == sorted(degs)
    for deg in set(degs):
        block = [a for a in idx if sum(a) == deg]
        assert block == sorted(block, reverse=True)
        assert len(set(block)) == len(block)
    for a in idx:
        assert idx.alphas[idx.index(a)] == a


def test_multi_index_lower_bound():
    idx = MultiIndexSet(2, 4, lo=2)
    assert idx.m == count_monomials(2, 4, lo=2) == 12
    assert all(sum(a) >= 2 for a in idx)
    assert list(MultiIndexSet(2, 2))[:3] == [(0, 0), (1, 0), (0, 1)]
    with pytest.raises(KeyError):
        idx.index((1, 0))


def test_weight_schemes():
    np.testing.assert_array_equal(WeightScheme.BASE_EMPHASIS.weights(4), [1, 0.25, 0.25, 0.25])
    np.testing.assert_array_equal(WeightScheme.UNIFORM.weights(3), [1, 1, 1])


def test_local_coordinates():
    h = 0.3
    S = np.array([[1.0, 0, 0], [np.cos(h), np.sin(h), 0], [0.9, 0.1, 0.2]])
    frame = np.array([[0.0, 0], [1, 0], [0, 1]])
    th = local_coordinates(S, frame)
    np.testing.assert_array_equal(th[0], [0, 0])
    np.testing.assert_allclose(th[1], [np.sin(h), 0.0], atol=1e-15)
    # planar cloud in its own plane
    P = np.column_stack([np.random.default_rng(0).normal(size=(5, 2)), np.zeros(5)])
    np.testing.assert_allclose(local_coordinates(P, np.eye(3)[:, :2]), P[:, :2] - P[0, :2], atol=1e-15)


def test_design_matrix_entries(rng):
    assert design_matrix(np.array([[2.0, 3.0]]), MultiIndexSet(2, 3))[0, MultiIndexSet(2, 3).index((1, 2))] == 18
    np.testing.assert_array_equal(design_matrix(rng.normal(size=(6, 2)), MultiIndexSet(2, 0)), np.ones((6, 1)))
    theta = rng.normal(size=(10, 2))
    idx = MultiIndexSet(2, 3)
    naive = np.array([[naive_monomial(t, a) for a in idx] for t in theta])
    np.testing.assert_allclose(design_matrix(theta, idx), naive, rtol=1e-14)


def test_monomial_gradients_match_finite_differences(rng):
    theta = rng.normal(size=(4, 3)) * 0.5
    idx = MultiIndexSet(3, 3)
    g = monomial_gradients(theta, idx)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (design_matrix(theta + e, idx) - design_matrix(theta - e, idx)) / (2 * h)
        np.testing.assert_allclose(g[..., i], fd, atol=1e-8)


@pytest.mark.parametrize("scheme", list(WeightScheme))
@given(seed=st.integers(0, 10**6), l=st.integers(1, 5))
@example(seed=8076, l=5)
def test_polynomial_reproduction(scheme, seed, l):
    rng = np.random.default_rng(seed)
    idx = MultiIndexSet(2, l)
    theta = np.vstack([np.zeros(2), rng.uniform(-0.2, 0.2, (3 * idx.m, 2))])
    c = rng.normal(size=idx.m)
    F = build_local_fit(theta, idx, scheme)
    b = fit(F, design_matrix(theta, idx) @ c)
    np.testing.assert_allclose(b, c, rtol=1e-8, atol=1e-8 * np.abs(c).max())
    for alpha in idx:
        scale = math.prod(math.factorial(a) for a in alpha)
        exact = scale * c[idx.index(alpha)]
        # the derivative is alpha! times a coefficient, so it inherits the coefficient tolerance times alpha!
        tol = 1e-8 * scale * np.abs(c).max()
        assert derivative_at_base(b, idx, alpha) == pytest.approx(exact, rel=1e-8, abs=tol)
        # derivative rows give the same number straight from values
        assert F.derivative_row(alpha) @ (design_matrix(theta, idx) @ c) == pytest.approx(exact, rel=1e-8, abs=tol)


def test_constant_values():
    idx = MultiIndexSet(2, 3)
    theta = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    theta[0] = 0
    b = fit(build_local_fit(theta, idx), np.full(20, 5.0))
    assert b[0] == pytest.approx(5.0, abs=1e-12)
    np.testing.assert_allclose(b[1:], 0, atol=1e-10)


def test_derivative_at_base_factorials():
    idx = MultiIndexSet(2, 2)
    b = np.arange(1.0, 7.0)
    assert derivative_at_base(b, idx, (0, 0)) == b[0]
    assert derivative_at_base(b, idx, (2, 0)) == 2 * b[idx.index((2, 0))]
    b[idx.index((1, 1))] = 3.0
    assert derivative_at_base(b, idx, (1, 1)) == 3.0
    with pytest.raises(KeyError):
        derivative_at_base(b, idx, (3, 0))


def test_underdetermined_stencil_is_rank_deficient():
    idx = MultiIndexSet(2, 3)
    with pytest.raises(RankDeficient):
        build_local_fit(np.random.default_rng(0).normal(size=(idx.m - 1, 2)), idx)


def test_degenerate_stencil_is_rank_deficient():
    # all points on a line cannot determine quadratic cross terms
    t = np.linspace(-1, 1, 20)
    theta = np.column_stack([t, 2 * t])
    with pytest.raises(RankDeficient) as err:
        build_local_fit(theta, MultiIndexSet(2, 2), where=7)
    assert err.value.where == 7


def test_batched_fit_matches_single(rng):
    idx = MultiIndexSet(2, 3)
    theta = rng.uniform(-0.1, 0.1, (5, 25, 2))
    theta[:, 0] = 0
    Fb = build_local_fit(theta, idx)
    for i in range(5):
        Fi = build_local_fit(theta[i], idx)
        np.testing.assert_allclose(Fb.phi_dagger[i], Fi.phi_dagger, rtol=1e-12, atol=1e-12)


def test_derivative_error_decays_with_stencil_size():
    # smooth non-polynomial data: second derivative error shrinks like h^(l+1-2)
    idx = MultiIndexSet(2, 3)
    rng = np.random.default_rng(5)
    errs = []
    hs = [0.2, 0.1, 0.05]
    base = rng.uniform(-1, 1, (40, 2))
    for h in hs:
        theta = np.vstack([np.zeros(2), h * base])
        f = np.sin(theta[:, 0] + 0.3) * np.cos(2 * theta[:, 1])
        d20 = build_local_fit(theta, idx).derivative_row((2, 0)) @ f
        errs.append(abs(d20 + np.sin(0.3)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.35)
