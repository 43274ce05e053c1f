"""Torque via the Maxwell stress line integral, semi-norm errors, field export."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import MultiPatchModel
from .magnetostatics import SaddleSolution, evaluate_field
from .materials import MU0


# ---------------------------------------------------------------------------
# point location

def invert_point(patch, x, xi0=(0.5, 0.5), tol=1e-12, max_iter=40):
    """Newton inversion of the patch map; returns xi or None if outside."""
    xi = np.clip(np.asarray(xi0, dtype=float), 0.0, 1.0)
    target = np.asarray(x, dtype=float)
    for _ in range(max_iter):
        p, jac = patch.evaluate(tuple(xi), 1)
        r = p - target
        if np.linalg.norm(r) < tol:
            return xi
        step = np.linalg.solve(jac, r)
        xi = np.clip(xi - step, 0.0, 1.0)
    p = patch.evaluate(tuple(xi), 0)
    if np.linalg.norm(p - target) < 1e-9:
        return xi
    return None


def _locate_on_circle(model: MultiPatchModel, candidates, r: float, theta: float):
    """Find (patch_idx, xi) mapping to the polar point (r, theta)."""
    x = np.array([r * math.cos(theta), r * math.sin(theta)])
    best = None
    for pi in candidates:
        patch = model.patches[pi]
        span = patch.meta.get("theta_span")
        rspan = patch.meta.get("r_span")
        if span is not None and not (span[0] - 1e-9 <= theta <= span[1] + 1e-9):
            continue
        if span is not None and rspan is not None:
            u0 = (r - rspan[0]) / (rspan[1] - rspan[0])
            v0 = (theta - span[0]) / (span[1] - span[0])
            guess = (u0, v0)
        else:
            guess = (0.5, 0.5)
        xi = invert_point(patch, x, guess)
        if xi is not None:
            return pi, xi
        best = pi
    raise NumericalError(
        f"point (r={r:.6g}, theta={math.degrees(theta):.3f} deg) not found in "
        f"candidate patches (last tried {best})"
    )


# ---------------------------------------------------------------------------
# torque

@dataclass(frozen=True)
class TorqueResult:
    torque: float       # N*m
    radius: float       # integration radius [m]
    length: float       # axial machine length [m]
    n_quadrature: int


def maxwell_stress_integral(b_polar_fn, r: float, length: float, theta_span,
                            multiplicity: int, n_quadrature: int) -> float:
    """T = multiplicity * (r^2 L / mu0) * int_span B_r B_phi dphi.

    ``b_polar_fn(theta) -> (B_r, B_phi)``; composite 4-point Gauss with
    ``n_quadrature`` subintervals over the span.
    """
    from .splines import gauss_rule

    rule = gauss_rule(4)
    t0, t1 = theta_span
    edges = np.linspace(t0, t1, n_quadrature + 1)
    acc = 0.0
    for k in range(n_quadrature):
        gt, gw = rule.mapped(edges[k], edges[k + 1])
        for t, w in zip(gt, gw):
            br, bp = b_polar_fn(t)
            acc += w * br * bp
    return multiplicity * (r * r * length / MU0) * acc


def torque(model: MultiPatchModel, sol: SaddleSolution, r: float | None = None,
           length: float | None = None, n_quadrature: int = 64) -> TorqueResult:
    """Maxwell stress torque on a circle of radius r inside the air gap.

    The sector integral is scaled by 2 * pole_pairs (anti-periodic symmetry).
    Default radius is the middle of the rotor-side half of the gap: the field
    there is smooth, whereas near the stator bore the tooth-corner
    singularities make the line integral very sensitive to quadrature
    placement on coarse meshes.
    """
    r_in = model.meta.get("r_rotor")
    r_out = model.meta.get("r_stator_in")
    r_ag = model.meta.get("r_airgap")
    if length is None:
        length = model.meta.get("length", 1.0)
    if r is None:
        r = 0.5 * (r_in + r_ag) if r_ag is not None else 0.5 * (r_in + r_out)
    if r_in is not None and not (r_in < r < r_out):
        raise NumericalError(
            f"integration radius {r * 1e3:.3f} mm outside the air gap "
            f"({r_in * 1e3:.3f}, {r_out * 1e3:.3f}) mm"
        )
    alpha = model.meta.get("alpha_rad", 0.0)
    on_rotor = r <= r_ag
    candidates = [
        pi for pi in (model.patches_of("rotor") if on_rotor else model.patches_of("stator"))
        if model.patches[pi].material_tag == "air"
    ]
    theta0 = alpha if on_rotor else 0.0
    span = (theta0, theta0 + model.sector_angle)

    def b_polar(theta):
        pi_, xi = _locate_on_circle(model, candidates, r, theta)
        _, b = evaluate_field(model, sol, pi_, tuple(xi))
        c, s = math.cos(theta), math.sin(theta)
        return b[0] * c + b[1] * s, -b[0] * s + b[1] * c

    t = maxwell_stress_integral(b_polar, r, length, span, 2 * model.pole_pairs, n_quadrature)
    return TorqueResult(torque=t, radius=r, length=length, n_quadrature=n_quadrature)


# ---------------------------------------------------------------------------
# errors in the reference semi-norm

def seminorm_error(u: np.ndarray, v: np.ndarray, K0) -> float:
    """Relative error sqrt((u-v)' K0 (u-v) / (u' K0 u))."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = float(u @ (K0 @ u))
    if denom <= 0.0:
        raise NumericalError("seminorm_error: reference vector has zero K0-norm")
    d = u - v
    num = float(d @ (K0 @ d))
    return math.sqrt(max(num, 0.0) / denom)


# ---------------------------------------------------------------------------
# field export

FIELD_HEADER = "x[m],y[m],A_z[Wb/m],B_x[T],B_y[T],B_mag[T]"


def sample_field(model: MultiPatchModel, sol: SaddleSolution, resolution: int) -> np.ndarray:
    """Structured (x, y, A_z, B_x, B_y, |B|) samples, ``resolution``^2 per patch."""
    rows = []
    ts = np.linspace(0.0, 1.0, resolution)
    for pi in range(len(model.patches)):
        for tu in ts:
            for tv in ts:
                a, b = evaluate_field(model, sol, pi, (tu, tv))
                x = model.patches[pi].evaluate((tu, tv), 0)
                rows.append([x[0], x[1], a, b[0], b[1], math.hypot(b[0], b[1])])
    return np.array(rows)


def export_field(model: MultiPatchModel, sol: SaddleSolution, resolution: int,
                 path, fmt: str = "csv") -> np.ndarray:
    """Write sampled field values to disk; returns the sample array."""
    data = sample_field(model, sol, resolution)
    try:
        if fmt == "csv":
            _write_csv(data, path)
        elif fmt == "vtk":
            _write_vtk(model, sol, resolution, path)
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    except OSError as exc:
        raise NumericalError(f"field export to {path} failed: {exc}") from exc
    return data


def _write_csv(data: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write(FIELD_HEADER + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_field_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _write_vtk(model, sol, resolution, path) -> None:
    """Legacy-VTK structured grids, one file per patch (suffix _p<i>.vtk)."""
    import os

    base, _ = os.path.splitext(str(path))
    ts = np.linspace(0.0, 1.0, resolution)
    for pi in range(len(model.patches)):
        pts, az, bs = [], [], []
        for tv in ts:
            for tu in ts:
                a, b = evaluate_field(model, sol, pi, (tu, tv))
                x = model.patches[pi].evaluate((tu, tv), 0)
                pts.append((x[0], x[1]))
                az.append(a)
                bs.append(b)
        with open(f"{base}_p{pi}.vtk", "w") as fh:
            fh.write("# vtk DataFile Version 3.0\nigafield field export\nASCII\n")
            fh.write("DATASET STRUCTURED_GRID\n")
            fh.write(f"DIMENSIONS {resolution} {resolution} 1\n")
            fh.write(f"POINTS {len(pts)} double\n")
            for x, y in pts:
                fh.write(f"{x:.17g} {y:.17g} 0.0\n")
            fh.write(f"POINT_DATA {len(pts)}\nSCALARS A_z double 1\nLOOKUP_TABLE default\n")
            for a in az:
                fh.write(f"{a:.17g}\n")
            fh.write("VECTORS B double\n")
            for b in bs:
                fh.write(f"{b[0]:.17g} {b[1]:.17g} 0.0\n")
