"""Univariate and tensor-product B-spline/NURBS basis evaluation.

Open (clamped) knot vectors on [0, 1] only.  Basis values and derivatives
come from the Cox-de-Boor recursion; rational (NURBS) values follow by
dividing through the weight function.  Gauss-Legendre rules round out the
quadrature needs of the assembly routines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector in [0, 1] with polynomial degree ``p``."""

    knots: np.ndarray
    p: int

    def __post_init__(self):
        kt = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", kt)
        if self.p < 0:
            raise ValueError("degree must be non-negative")
        if kt.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if np.any(np.diff(kt) < 0.0):
            raise ValueError("knots must be non-decreasing")
        n = kt.size - self.p - 1
        if n < self.p + 1:
            raise ValueError("need at least p+1 basis functions")
        first, last = kt[0], kt[-1]
        if not (np.all(kt[: self.p + 1] == first) and np.all(kt[-(self.p + 1):] == last)):
            raise ValueError("knot vector must be open (clamped)")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.p - 1

    def spans(self) -> list[tuple[int, float, float]]:
        """Non-degenerate spans as (index, left, right) triples."""
        out = []
        for i in range(self.p, self.n):
            if self.knots[i] < self.knots[i + 1]:
                out.append((i, float(self.knots[i]), float(self.knots[i + 1])))
        return out


@dataclass(frozen=True)
class BasisEval:
    """Nonzero basis values (and optional derivative rows) at one point.

    ``values[k]`` belongs to basis function ``span - p + k``.  ``derivs``
    has one row per derivative order starting at order 1.
    """

    span: int
    values: np.ndarray
    derivs: np.ndarray | None = None

    def first_indices(self, p: int) -> np.ndarray:
        return np.arange(self.span - p, self.span + 1)


@dataclass(frozen=True)
class WeightVector:
    """Strictly positive NURBS weights."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if np.any(w <= 0.0):
            raise ValueError("all NURBS weights must be positive")


@dataclass(frozen=True)
class QuadRule:
    """Gauss rule on (-1, 1)."""

    points: np.ndarray
    weights: np.ndarray

    def mapped(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Affinely map the rule onto the interval (a, b)."""
        h = 0.5 * (b - a)
        return a + h * (self.points + 1.0), h * self.weights


def gauss_rule(n_points: int) -> QuadRule:
    """Gauss-Legendre rule with ``n_points`` nodes, 1 <= n_points <= 16."""
    if not 1 <= n_points <= 16:
        raise ConfigError(f"gauss_rule supports 1..16 points, got {n_points}")
    x, w = np.polynomial.legendre.leggauss(n_points)
    return QuadRule(points=x, weights=w)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index i with knots[i] <= xi < knots[i+1]; xi=1 maps into the last span."""
    if xi < 0.0 or xi > 1.0:
        raise ValueError(f"parameter {xi} outside [0, 1]")
    kt, p, n = kv.knots, kv.p, kv.n
    if xi >= kt[n]:
        # endpoint convention: last non-degenerate span
        span = n - 1
        while kt[span] == kt[span + 1]:
            span -= 1
        return span
    span = int(np.searchsorted(kt, xi, side="right")) - 1
    return max(span, p)


def eval_bspline(kv: KnotVector, xi: float, deriv_order: int = 0) -> BasisEval:
    """Nonzero B-spline basis values and derivatives at ``xi``.

    Derivative rows of order > p are zero (smoothness-forced), never an
    error.  Algorithm follows the standard derivative extension of the
    Cox-de-Boor recursion.
    """
    p = kv.p
    kt = kv.knots
    span = find_span(kv, xi)

    # triangular table of basis values per degree (ndu) plus knot differences
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - kt[span + 1 - j]
        right[j] = kt[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    values = ndu[:, p].copy()
    if deriv_order <= 0:
        return BasisEval(span=span, values=values)

    nd = deriv_order
    ders = np.zeros((nd + 1, p + 1))
    ders[0] = values
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, min(nd, p) + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    r = p
    for k in range(1, min(nd, p) + 1):
        ders[k] *= r
        r *= p - k
    # rows for orders > p stay zero
    return BasisEval(span=span, values=values, derivs=ders[1:])


def eval_nurbs(kv: KnotVector, w: WeightVector, xi: float, deriv_order: int = 0) -> BasisEval:
    """Rational basis values N_i = w_i B_i / sum_j w_j B_j with derivatives.

    Derivatives use the Leibniz form of the quotient rule on
    R_i * W = w_i B_i, valid to any order.
    """
    be = eval_bspline(kv, xi, deriv_order)
    wl = np.asarray(w.weights, dtype=float)[be.span - kv.p : be.span + 1]
    W = float(wl @ be.values)
    values = wl * be.values / W
    if deriv_order <= 0:
        return BasisEval(span=be.span, values=values)

    nb = np.vstack([be.values, be.derivs])  # rows: order 0..deriv_order
    Wd = nb @ wl  # derivatives of the weight function, order 0..deriv_order
    R = np.zeros((deriv_order + 1, kv.p + 1))
    R[0] = values
    from math import comb

    for k in range(1, deriv_order + 1):
        acc = wl * nb[k]
        for j in range(k):
            acc = acc - comb(k, j) * R[j] * Wd[k - j]
        R[k] = acc / W
    return BasisEval(span=be.span, values=R[0], derivs=R[1:])


@dataclass(frozen=True)
class TensorBasis:
    """Nonzero bivariate basis values at one parametric point.

    ``indices`` holds (i_u, i_v) pairs aligned with ``values`` rows;
    ``grad`` holds the parametric partials (d/dxi_u, d/dxi_v).
    """

    indices: np.ndarray
    values: np.ndarray
    grad: np.ndarray | None = None


def eval_tensor_2d(
    kv_u: KnotVector,
    kv_v: KnotVector,
    weights: np.ndarray | None,
    xi: tuple[float, float],
    deriv_order: int = 0,
) -> TensorBasis:
    """Tensor-product basis at ``xi``; rational if a 2D weight array is given.

    For the rational case the bivariate weight function couples the two
    directions, so the quotient rule is applied to the full product
    w_ij Bu_i Bv_j.
    """
    if deriv_order > 1:
        raise ConfigError("eval_tensor_2d supports deriv_order 0 or 1")
    bu = eval_bspline(kv_u, xi[0], deriv_order)
    bv = eval_bspline(kv_v, xi[1], deriv_order)
    iu = bu.first_indices(kv_u.p)
    iv = bv.first_indices(kv_v.p)
    idx = np.array([(i, j) for i in iu for j in iv], dtype=int)

    vals = np.outer(bu.values, bv.values).ravel()
    if deriv_order >= 1:
        du = np.outer(bu.derivs[0], bv.values).ravel()
        dv = np.outer(bu.values, bv.derivs[0]).ravel()

    if weights is None:
        grad = np.column_stack([du, dv]) if deriv_order >= 1 else None
        return TensorBasis(indices=idx, values=vals, grad=grad)

    wl = np.asarray(weights, dtype=float)[np.ix_(iu, iv)].ravel()
    W = float(wl @ vals)
    rvals = wl * vals / W
    if deriv_order == 0:
        return TensorBasis(indices=idx, values=rvals)
    Wu = float(wl @ du)
    Wv = float(wl @ dv)
    ru = (wl * du - rvals * Wu) / W
    rv = (wl * dv - rvals * Wv) / W
    return TensorBasis(indices=idx, values=rvals, grad=np.column_stack([ru, rv]))
