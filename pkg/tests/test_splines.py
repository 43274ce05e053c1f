"""B-spline / NURBS basis evaluation tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.interpolate import BSpline

from igafield.errors import ConfigError
from igafield.splines import (KnotVector, WeightVector, eval_bspline,
                              eval_nurbs, eval_tensor_2d, find_span,
                              gauss_rule)


def open_knots(p, n_elem, rng=None):
    """Random (or uniform) open knot vector of degree p with n_elem spans."""
    if rng is None:
        interior = np.linspace(0.0, 1.0, n_elem + 1)[1:-1]
    else:
        interior = np.sort(rng.uniform(0.05, 0.95, n_elem - 1))
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(knots, p)


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector(np.array([0.0, 0.0, 1.0, 1.0]), 2)  # not clamped for p=2
    with pytest.raises(ValueError):
        KnotVector(np.array([0.0, 0.0, 0.5, 0.2, 1.0, 1.0]), 1)  # decreasing


def test_find_span_boundaries():
    kv = open_knots(2, 4)
    assert find_span(kv, 0.0) == 2
    # xi = 1 must land in the last non-degenerate span
    last = find_span(kv, 1.0)
    assert kv.knots[last] < kv.knots[last + 1] == 1.0
    with pytest.raises(ValueError):
        find_span(kv, 1.2)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_partition_of_unity_and_positivity(p):
    rng = np.random.default_rng(10 + p)
    kv = open_knots(p, 5, rng)
    for xi in rng.uniform(0.0, 1.0, 50):
        ev = eval_bspline(kv, xi, 0)
        assert np.all(ev.values >= -1e-14)
        assert_allclose(ev.values.sum(), 1.0, atol=1e-13)


@pytest.mark.parametrize("p", [2, 3])
def test_bspline_matches_scipy(p):
    rng = np.random.default_rng(3)
    kv = open_knots(p, 6, rng)
    coeffs = rng.normal(size=kv.n)
    spl = BSpline(kv.knots, coeffs, p)
    for xi in rng.uniform(0.0, 1.0, 40):
        ev = eval_bspline(kv, xi, 2)
        idx = ev.first_indices(p)
        assert_allclose(ev.values @ coeffs[idx], spl(xi), atol=1e-12)
        assert_allclose(ev.derivs[0] @ coeffs[idx], spl.derivative()(xi), atol=1e-10)
        assert_allclose(ev.derivs[1] @ coeffs[idx], spl.derivative(2)(xi), atol=1e-8)


def test_derivative_orders_beyond_degree_are_zero():
    kv = open_knots(2, 3)
    ev = eval_bspline(kv, 0.3, 4)
    # rows are orders 1..4; orders 3 and 4 exceed the degree
    assert_allclose(ev.derivs[2], 0.0)
    assert_allclose(ev.derivs[3], 0.0)


def test_nurbs_quarter_circle_exact():
    """Weights cos(span/2) reproduce a circular arc to machine precision."""
    kv = KnotVector(np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]), 2)
    w = WeightVector(np.array([1.0, np.cos(np.pi / 4), 1.0]))
    cp = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    for xi in np.linspace(0.0, 1.0, 50):
        ev = eval_nurbs(kv, w, xi, 1)
        x = ev.values @ cp
        assert_allclose(np.hypot(x[0], x[1]), 1.0, atol=1e-14)
        # tangent orthogonal to the radius on a circle
        t = ev.derivs[0] @ cp
        assert abs(x @ t) < 1e-12


@pytest.mark.parametrize("p", [1, 2, 3])
def test_nurbs_derivatives_match_finite_differences(p):
    rng = np.random.default_rng(40 + p)
    kv = open_knots(p, 4, rng)
    w = WeightVector(rng.uniform(0.5, 2.0, kv.n))
    h = 1e-6
    for xi in rng.uniform(0.05, 0.95, 25):
        ev = eval_nurbs(kv, w, xi, 1)
        lo = eval_nurbs(kv, w, xi - h, 0)
        hi = eval_nurbs(kv, w, xi + h, 0)
        if not lo.span == hi.span == ev.span:
            continue  # straddling a knot; skip the FD comparison there
        fd = (hi.values - lo.values) / (2 * h)
        assert_allclose(ev.derivs[0], fd, rtol=2e-6, atol=2e-6)


def test_nurbs_rational_sums_to_one():
    rng = np.random.default_rng(5)
    kv = open_knots(3, 5, rng)
    w = WeightVector(rng.uniform(0.2, 3.0, kv.n))
    for xi in rng.uniform(0.0, 1.0, 30):
        ev = eval_nurbs(kv, w, xi, 0)
        assert_allclose(ev.values.sum(), 1.0, atol=1e-12)


def test_tensor_basis_partition_and_gradient():
    rng = np.random.default_rng(7)
    ku = open_knots(2, 3, rng)
    kv = open_knots(3, 2, rng)
    w = rng.uniform(0.5, 2.0, (ku.n, kv.n))
    h = 1e-6
    for _ in range(20):
        xi = tuple(rng.uniform(0.05, 0.95, 2))
        tb = eval_tensor_2d(ku, kv, w, xi, 1)
        assert_allclose(tb.values.sum(), 1.0, atol=1e-12)
        for d in range(2):
            lo, hi = list(xi), list(xi)
            lo[d] -= h
            hi[d] += h
            tlo = eval_tensor_2d(ku, kv, w, tuple(lo), 0)
            thi = eval_tensor_2d(ku, kv, w, tuple(hi), 0)
            if not np.array_equal(tlo.indices, thi.indices):
                continue
            fd = (thi.values - tlo.values) / (2 * h)
            assert_allclose(tb.grad[:, d], fd, rtol=3e-6, atol=3e-6)


def test_tensor_basis_rejects_higher_derivatives():
    ku = open_knots(2, 2)
    with pytest.raises(ConfigError):
        eval_tensor_2d(ku, ku, None, (0.5, 0.5), 2)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
def test_gauss_rule_polynomial_exactness(n):
    rule = gauss_rule(n)
    # exact for polynomials up to degree 2n-1 on [0, 1]
    for deg in range(2 * n):
        xs, ws = rule.mapped(0.0, 1.0)
        assert_allclose(np.sum(ws * xs**deg), 1.0 / (deg + 1), atol=1e-13)


def test_gauss_rule_bounds():
    with pytest.raises(ConfigError):
        gauss_rule(0)
    with pytest.raises(ConfigError):
        gauss_rule(17)
