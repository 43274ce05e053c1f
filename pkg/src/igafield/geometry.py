"""Multi-patch NURBS geometry: maps from the reference square, Jacobians,
uniform h-refinement, validation and JSON export.

Edges are named "u0" (xi_u = 0), "u1", "v0" (xi_v = 0), "v1".  Matched
interface edges must carry identical knot vectors and coincident mapped
control points; the machine builder guarantees this by sharing the rail
control nets between neighbouring patches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .splines import KnotVector, eval_tensor_2d, find_span, gauss_rule

EDGES = ("u0", "u1", "v0", "v1")

MATERIALS = ("iron", "air", "magnet", "coil")
BOUNDARY_TAGS = ("dirichlet", "antiperiodic_master", "antiperiodic_slave", "airgap")


@dataclass
class Patch:
    """One tensor-product NURBS map from [0,1]^2 to a physical subdomain."""

    kv_u: KnotVector
    kv_v: KnotVector
    weights: np.ndarray          # (n_u, n_v), positive
    control_points: np.ndarray   # (n_u, n_v, 2), meters
    material_tag: str
    subdomain: str               # "rotor" | "stator"
    phase: int | None = None     # coil phase index for material_tag == "coil"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.control_points = np.asarray(self.control_points, dtype=float)
        nu, nv = self.kv_u.n, self.kv_v.n
        if self.weights.shape != (nu, nv):
            raise ValueError(f"weights shape {self.weights.shape} != ({nu}, {nv})")
        if self.control_points.shape != (nu, nv, 2):
            raise ValueError("control point array inconsistent with knot vectors")
        if np.any(self.weights <= 0):
            raise ValueError("NURBS weights must be positive")
        if self.material_tag not in MATERIALS:
            raise ValueError(f"unknown material {self.material_tag!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv_u.n, self.kv_v.n

    def evaluate(self, xi: tuple[float, float], deriv_order: int = 0):
        """Mapped point (and Jacobian for deriv_order >= 1)."""
        tb = eval_tensor_2d(self.kv_u, self.kv_v, self.weights, xi, deriv_order)
        pts = self.control_points[tb.indices[:, 0], tb.indices[:, 1]]
        x = tb.values @ pts
        if deriv_order == 0:
            return x
        jac = tb.grad.T @ pts  # rows: d/dxi_u, d/dxi_v -> J[i][j] = dx_j/dxi_i
        return x, jac.T

    def edge_indices(self, edge: str) -> np.ndarray:
        """(i_u, i_v) index pairs along an edge, in increasing edge parameter."""
        nu, nv = self.shape
        if edge == "u0":
            return np.array([(0, j) for j in range(nv)])
        if edge == "u1":
            return np.array([(nu - 1, j) for j in range(nv)])
        if edge == "v0":
            return np.array([(i, 0) for i in range(nu)])
        if edge == "v1":
            return np.array([(i, nv - 1) for i in range(nu)])
        raise ValueError(f"unknown edge {edge!r}")

    def edge_control_points(self, edge: str) -> np.ndarray:
        idx = self.edge_indices(edge)
        return self.control_points[idx[:, 0], idx[:, 1]]


def map_point(patch: Patch, xi: tuple[float, float]) -> np.ndarray:
    """Physical coordinates of a reference point."""
    return patch.evaluate(xi, 0)


def jacobian(patch: Patch, xi: tuple[float, float]) -> np.ndarray:
    """2x2 matrix dx/dxi."""
    _, jac = patch.evaluate(xi, 1)
    return jac


@dataclass
class MultiPatchModel:
    """A collection of conforming patches with interface and boundary metadata."""

    patches: list[Patch]
    interfaces: list[tuple[int, str, int, str, int]]  # (a, edge_a, b, edge_b, orientation +-1)
    boundary_tags: dict[tuple[int, str], str]
    pole_pairs: int = 1
    sector_angle: float = np.pi
    meta: dict = field(default_factory=dict)

    def patches_of(self, subdomain: str) -> list[int]:
        return [i for i, p in enumerate(self.patches) if p.subdomain == subdomain]

    def exterior_edges(self) -> list[tuple[int, str]]:
        interior = set()
        for a, ea, b, eb, _ in self.interfaces:
            interior.add((a, ea))
            interior.add((b, eb))
        out = []
        for i in range(len(self.patches)):
            for e in EDGES:
                if (i, e) not in interior:
                    out.append((i, e))
        return out


# ---------------------------------------------------------------------------
# interface detection

def match_interfaces(patches: list[Patch], tol: float = 1e-9) -> list[tuple[int, str, int, str, int]]:
    """Detect conforming shared edges by comparing edge control nets.

    Orientation +1 means both edges run in the same parametric direction,
    -1 means reversed.  Patches from different subdomains are never glued
    (rotor and stator couple only through the mortar).
    """
    records = []
    edges = []
    for i, p in enumerate(patches):
        for e in EDGES:
            edges.append((i, e, p.edge_control_points(e), p.subdomain))
    used = set()
    for a in range(len(edges)):
        ia, ea, cpa, sda = edges[a]
        if (ia, ea) in used:
            continue
        for b in range(a + 1, len(edges)):
            ib, eb, cpb, sdb = edges[b]
            if ib == ia or (ib, eb) in used or sda != sdb:
                continue
            if cpa.shape != cpb.shape:
                continue
            if np.allclose(cpa, cpb, atol=tol, rtol=0):
                records.append((ia, ea, ib, eb, +1))
            elif np.allclose(cpa, cpb[::-1], atol=tol, rtol=0):
                records.append((ia, ea, ib, eb, -1))
            else:
                continue
            used.add((ia, ea))
            used.add((ib, eb))
            break
    return records


# ---------------------------------------------------------------------------
# refinement

def _insert_knot_curve(hpts: np.ndarray, kv: KnotVector, xi: float) -> tuple[np.ndarray, KnotVector]:
    """Boehm single-knot insertion on homogeneous control points (n, 3)."""
    p, kt = kv.p, kv.knots
    k = find_span(kv, xi)
    n = kv.n
    new = np.zeros((n + 1, hpts.shape[1]))
    new[: k - p + 1] = hpts[: k - p + 1]
    for i in range(k - p + 1, k + 1):
        denom = kt[i + p] - kt[i]
        alpha = (xi - kt[i]) / denom if denom > 0 else 0.0
        new[i] = alpha * hpts[i] + (1.0 - alpha) * hpts[i - 1]
    new[k + 1 :] = hpts[k:]
    new_kt = np.insert(kt, k + 1, xi)
    return new, KnotVector(new_kt, p)


def _refine_patch(patch: Patch, levels: int) -> Patch:
    pts = patch.control_points
    w = patch.weights
    hom = np.concatenate([pts * w[..., None], w[..., None]], axis=2)
    kv_u, kv_v = patch.kv_u, patch.kv_v
    for _ in range(levels):
        for mid in [0.5 * (a + b) for _, a, b in kv_u.spans()]:
            rows = []
            for j in range(hom.shape[1]):
                new, kv_new = _insert_knot_curve(hom[:, j, :], kv_u, mid)
                rows.append(new)
            hom = np.stack(rows, axis=1)
            kv_u = kv_new
        for mid in [0.5 * (a + b) for _, a, b in kv_v.spans()]:
            cols = []
            for i in range(hom.shape[0]):
                new, kv_new = _insert_knot_curve(hom[i, :, :], kv_v, mid)
                cols.append(new)
            hom = np.stack(cols, axis=0)
            kv_v = kv_new
    w_new = hom[..., 2]
    pts_new = hom[..., :2] / w_new[..., None]
    return Patch(
        kv_u=kv_u,
        kv_v=kv_v,
        weights=w_new,
        control_points=pts_new,
        material_tag=patch.material_tag,
        subdomain=patch.subdomain,
        phase=patch.phase,
        meta=dict(patch.meta),
    )


def refine(model: MultiPatchModel, levels: int) -> MultiPatchModel:
    """Uniform knot insertion at span midpoints; the mapped surface is unchanged."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return model
    patches = [_refine_patch(p, levels) for p in model.patches]
    interfaces = match_interfaces(patches)
    return MultiPatchModel(
        patches=patches,
        interfaces=interfaces,
        boundary_tags=dict(model.boundary_tags),
        pole_pairs=model.pole_pairs,
        sector_angle=model.sector_angle,
        meta=dict(model.meta),
    )


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    passed: bool
    issues: list[str]

    def __bool__(self):
        return self.passed


def validate_geometry(model: MultiPatchModel, n_gauss: int | None = None) -> ValidationReport:
    """Check Jacobian positivity, interface conformity and tag completeness."""
    issues = []
    for pi, patch in enumerate(model.patches):
        ng = n_gauss or max(patch.kv_u.p, patch.kv_v.p) + 1
        rule = gauss_rule(ng)
        for su, a_u, b_u in patch.kv_u.spans():
            for sv, a_v, b_v in patch.kv_v.spans():
                gu, _ = rule.mapped(a_u, b_u)
                gv, _ = rule.mapped(a_v, b_v)
                for xu in gu:
                    for xv in gv:
                        _, jac = patch.evaluate((xu, xv), 1)
                        det = np.linalg.det(jac)
                        if det <= 0:
                            issues.append(
                                f"patch {pi}: non-positive Jacobian det {det:.3e} "
                                f"at xi=({xu:.4f},{xv:.4f})"
                            )
    for a, ea, b, eb, orient in model.interfaces:
        pa, pb = model.patches[a], model.patches[b]
        cpa = pa.edge_control_points(ea)
        cpb = pb.edge_control_points(eb)
        if orient < 0:
            cpb = cpb[::-1]
        if cpa.shape != cpb.shape or not np.allclose(cpa, cpb, atol=1e-12, rtol=0):
            issues.append(f"interface ({a},{ea})-({b},{eb}): control nets do not match")
    for pe in model.exterior_edges():
        if pe not in model.boundary_tags:
            issues.append(f"exterior edge {pe} carries no boundary tag")
    for pe, tag in model.boundary_tags.items():
        if tag not in BOUNDARY_TAGS:
            issues.append(f"edge {pe}: unknown boundary tag {tag!r}")
    return ValidationReport(passed=not issues, issues=issues)


# ---------------------------------------------------------------------------
# JSON export / import

def model_to_dict(model: MultiPatchModel) -> dict:
    return {
        "format": "igafield-geometry",
        "version": 1,
        "pole_pairs": model.pole_pairs,
        "sector_angle": model.sector_angle,
        "meta": model.meta,
        "patches": [
            {
                "degree_u": p.kv_u.p,
                "degree_v": p.kv_v.p,
                "knots_u": p.kv_u.knots.tolist(),
                "knots_v": p.kv_v.knots.tolist(),
                "weights": p.weights.tolist(),
                "control_points": p.control_points.tolist(),
                "material": p.material_tag,
                "subdomain": p.subdomain,
                "phase": p.phase,
                "meta": p.meta,
            }
            for p in model.patches
        ],
        "interfaces": [list(r) for r in model.interfaces],
        "boundary_tags": [[pi, edge, tag] for (pi, edge), tag in sorted(model.boundary_tags.items())],
    }


def export_geometry(model: MultiPatchModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_geometry(path) -> MultiPatchModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "igafield-geometry":
        raise GeometryError(f"{path}: not a geometry file")
    patches = [
        Patch(
            kv_u=KnotVector(np.asarray(d["knots_u"]), d["degree_u"]),
            kv_v=KnotVector(np.asarray(d["knots_v"]), d["degree_v"]),
            weights=np.asarray(d["weights"]),
            control_points=np.asarray(d["control_points"]),
            material_tag=d["material"],
            subdomain=d["subdomain"],
            phase=d.get("phase"),
            meta=d.get("meta", {}),
        )
        for d in doc["patches"]
    ]
    return MultiPatchModel(
        patches=patches,
        interfaces=[tuple(r) for r in doc["interfaces"]],
        boundary_tags={(pi, edge): tag for pi, edge, tag in doc["boundary_tags"]},
        pole_pairs=doc["pole_pairs"],
        sector_angle=doc["sector_angle"],
        meta=doc.get("meta", {}),
    )
