"""Built-in simplified parametric machine sector.

One pole of a two-pole machine: a half-annulus (sector angle pi) with a
rotor carrying one buried rectangular magnet and a stator carrying three
coil slots.  The four design/operating parameters are

    MAG   burial depth of the magnet below the rotor surface [m]
    MH    magnet height (radial extent of the block) [m]
    MW    magnet width [m]
    alpha rigid rotor rotation [deg]

For every feasible parameter vector the patch topology, degrees and knot
vectors are identical; only control points move, so solution coefficients
live on one fixed reference layout across the whole design space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .geometry import MultiPatchModel, Patch, match_interfaces
from .materials import NU0, Material, Reluctivity, analytic_reluctivity, constant_reluctivity
from .splines import KnotVector

# Table of admissible parameter ranges (min, max); lengths in meters,
# rotation in degrees.
PARAM_RANGES = {
    "mag": (5e-3, 15e-3),
    "mh": (1.5e-3, 12e-3),
    "mw": (7e-3, 23e-3),
    "alpha_deg": (0.0, 20.0),
}

# Largest axis-aligned sub-box of PARAM_RANGES in which every design fits
# the fixed radii (MAG + MH <= r_rotor - r_shaft - 2 * margin = 19 mm);
# sampling defaults use this so runs do not waste the failure budget on
# designs that cannot be built.
FEASIBLE_RANGES = {
    "mag": (5e-3, 12e-3),
    "mh": (1.5e-3, 7e-3),
    "mw": (7e-3, 23e-3),
    "alpha_deg": (0.0, 20.0),
}


@dataclass(frozen=True)
class ParamVector:
    """Design/operating parameters P = [MAG, MH, MW, alpha]."""

    mag: float
    mh: float
    mw: float
    alpha_deg: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mag, self.mh, self.mw, self.alpha_deg])

    @staticmethod
    def from_array(arr) -> "ParamVector":
        a = np.asarray(arr, dtype=float)
        return ParamVector(mag=a[0], mh=a[1], mw=a[2], alpha_deg=a[3])

    def range_violations(self) -> list[str]:
        out = []
        for name, (lo, hi) in PARAM_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                out.append(f"{name}={v:.6g} outside [{lo:.6g}, {hi:.6g}]")
        return out

    @staticmethod
    def midpoint() -> "ParamVector":
        vals = {k: 0.5 * (lo + hi) for k, (lo, hi) in PARAM_RANGES.items()}
        return ParamVector(**vals)


@dataclass(frozen=True)
class MachineConfig:
    """Fixed radii and source magnitudes of the built-in sector model."""

    r_shaft: float = 5e-3
    r_rotor: float = 25e-3
    r_airgap: float = 25.5e-3     # mortar interface circle
    r_stator_in: float = 26e-3
    r_slot_top: float = 38e-3
    r_stator_out: float = 45e-3
    pole_pairs: int = 1
    length: float = 0.1           # axial machine length [m]
    slot_span_deg: float = 40.0
    margin: float = 0.5e-3        # clearance of the magnet inside the rotor iron
    angular_margin_deg: float = 5.0
    # angular width of the air flux barriers flanking the magnet pocket;
    # must stay below angular_margin_deg so every feasible design keeps a
    # q-axis iron zone between barrier and sector boundary
    barrier_deg: float = 3.5
    b_rem: float = 1.3            # magnet remanence [T]
    j_peak: float = 6e6           # peak coil current density [A/m^2]
    # electrical angle offset of the current wave relative to the rotor
    # position; together with j_peak chosen so that the magnet-armature
    # torque dominates the reluctance and slot-harmonic terms and the total
    # torque keeps one sign with a healthy margin over the whole design box
    phase_offset_deg: float = 140.0
    iron: Reluctivity = field(default_factory=lambda: constant_reluctivity(NU0 / 5000.0))

    @property
    def sector_angle(self) -> float:
        return math.pi / self.pole_pairs


def brauer_iron(k1: float = 49.4, k2: float = 1.46, k3: float = 520.6) -> Reluctivity:
    """Classic analytic saturation curve for laminated steel."""
    return analytic_reluctivity(k1, k2, k3)


# ---------------------------------------------------------------------------
# rail helpers: all patch boundaries are single quadratic rational segments

_BEZIER2 = KnotVector(np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]), 2)


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _arc_rail(r: float, th_a: float, th_b: float):
    """Exact circular arc of radius r from th_a to th_b (|span| < pi)."""
    span = th_b - th_a
    w1 = math.cos(0.5 * span)
    if w1 <= 0:
        raise GeometryError(f"arc span {math.degrees(span):.1f} deg too wide for one segment")
    pts = np.array([r * _unit(th_a), (r / w1) * _unit(0.5 * (th_a + th_b)), r * _unit(th_b)])
    return pts, np.array([1.0, w1, 1.0])


def _line_rail(p0: np.ndarray, p1: np.ndarray):
    pts = np.array([p0, 0.5 * (p0 + p1), p1])
    return pts, np.ones(3)


def _ruled_patch(inner, outer, material: str, subdomain: str, phase=None, meta=None) -> Patch:
    """Quadratic patch ruled in u (inner rail -> outer rail), rail along v."""
    (pi_, wi), (po, wo) = inner, outer
    hom_i = np.column_stack([pi_ * wi[:, None], wi])
    hom_o = np.column_stack([po * wo[:, None], wo])
    hom_m = 0.5 * (hom_i + hom_o)  # exact degree elevation of the linear ruling
    hom = np.stack([hom_i, hom_m, hom_o], axis=0)  # (u, v, 3)
    w = hom[..., 2]
    cp = hom[..., :2] / w[..., None]
    return Patch(
        kv_u=_BEZIER2,
        kv_v=_BEZIER2,
        weights=w,
        control_points=cp,
        material_tag=material,
        subdomain=subdomain,
        phase=phase,
        meta=meta or {},
    )


# ---------------------------------------------------------------------------
# machine builder

def check_feasibility(P: ParamVector, cfg: MachineConfig) -> None:
    """Raise GeometryError naming the violated constraint, if any."""
    r_top = cfg.r_rotor - P.mag
    r_bot = r_top - P.mh
    if min(P.mag, P.mh, P.mw) <= 0:
        raise GeometryError("magnet_dimensions: MAG, MH, MW must be positive")
    if r_bot < cfg.r_shaft + cfg.margin:
        raise GeometryError(
            "magnet_bottom_clearance: rotor_surface - MAG - MH = "
            f"{r_bot * 1e3:.3f} mm < shaft + margin = {(cfg.r_shaft + cfg.margin) * 1e3:.3f} mm"
        )
    corner_r = math.hypot(0.5 * P.mw, r_top)
    if corner_r > cfg.r_rotor - cfg.margin:
        raise GeometryError(
            f"magnet_top_clearance: top corner radius {corner_r * 1e3:.3f} mm > "
            f"rotor_surface - margin = {(cfg.r_rotor - cfg.margin) * 1e3:.3f} mm"
        )
    half_angle = math.atan2(0.5 * P.mw, r_bot)
    limit = 0.5 * cfg.sector_angle - math.radians(cfg.angular_margin_deg)
    if half_angle > limit:
        raise GeometryError(
            f"magnet_angular_clearance: magnet half-angle {math.degrees(half_angle):.2f} deg > "
            f"{math.degrees(limit):.2f} deg"
        )


def _rotor_patches(P: ParamVector, cfg: MachineConfig) -> list[Patch]:
    theta = cfg.sector_angle
    th_c = 0.5 * theta
    r_top = cfg.r_rotor - P.mag
    r_bot = r_top - P.mh
    e_c, e_p = _unit(th_c), np.array([-math.sin(th_c), math.cos(th_c)])
    half = 0.5 * P.mw
    m_bl, m_br = r_bot * e_c - half * e_p, r_bot * e_c + half * e_p
    m_tl, m_tr = r_top * e_c - half * e_p, r_top * e_c + half * e_p
    th_bl, th_br = math.atan2(m_bl[1], m_bl[0]), math.atan2(m_br[1], m_br[0])
    th_tl, th_tr = math.atan2(m_tl[1], m_tl[0]), math.atan2(m_tr[1], m_tr[0])

    # angular rails per (level, zone); zones: 0 q-axis iron right of the
    # magnet (small angles), 1 right flux barrier, 2 magnet, 3 left flux
    # barrier, 4 q-axis iron left.  In the flanking zones the magnet-corner
    # levels are arcs through the corner radii r_c/r_t, which keeps every
    # ruled quad convex for all feasible magnet depths; in the magnet zone
    # they are the straight magnet edges.  The barriers continue through the
    # ring above the magnet: without that cut the iron shell between magnet
    # and rotor surface would close the magnet flux tangentially (via the
    # anti-periodic image pole) without it ever crossing the air gap.
    r_c = math.hypot(half, r_bot)   # radius of the bottom magnet corners
    r_t = math.hypot(half, r_top)   # radius of the top magnet corners
    d = math.radians(cfg.barrier_deg)
    b_bl, b_br = th_bl - d, th_br + d   # barrier outer edges, bottom levels
    b_tl, b_tr = th_tl - d, th_tr + d   # barrier outer edges, top levels
    levels = [
        [_arc_rail(cfg.r_shaft, 0.0, b_bl), _arc_rail(cfg.r_shaft, b_bl, th_bl),
         _arc_rail(cfg.r_shaft, th_bl, th_br),
         _arc_rail(cfg.r_shaft, th_br, b_br), _arc_rail(cfg.r_shaft, b_br, theta)],
        [_arc_rail(r_c, 0.0, b_bl), _arc_rail(r_c, b_bl, th_bl),
         _line_rail(m_bl, m_br),
         _arc_rail(r_c, th_br, b_br), _arc_rail(r_c, b_br, theta)],
        [_arc_rail(r_t, 0.0, b_tl), _arc_rail(r_t, b_tl, th_tl),
         _line_rail(m_tl, m_tr),
         _arc_rail(r_t, th_tr, b_tr), _arc_rail(r_t, b_tr, theta)],
        [_arc_rail(cfg.r_rotor, 0.0, b_tl), _arc_rail(cfg.r_rotor, b_tl, th_tl),
         _arc_rail(cfg.r_rotor, th_tl, th_tr),
         _arc_rail(cfg.r_rotor, th_tr, b_tr), _arc_rail(cfg.r_rotor, b_tr, theta)],
        [_arc_rail(cfg.r_airgap, 0.0, b_tl), _arc_rail(cfg.r_airgap, b_tl, th_tl),
         _arc_rail(cfg.r_airgap, th_tl, th_tr),
         _arc_rail(cfg.r_airgap, th_tr, b_tr), _arc_rail(cfg.r_airgap, b_tr, theta)],
    ]
    ring_materials = [
        ["iron", "iron", "iron", "iron", "iron"],
        ["iron", "air", "magnet", "air", "iron"],
        ["iron", "air", "iron", "air", "iron"],
        ["air", "air", "air", "air", "air"],
    ]
    zone_spans = [
        [(0.0, b_bl), (b_bl, th_bl), (th_bl, th_br), (th_br, b_br), (b_br, theta)],
        [(0.0, b_bl), (b_bl, th_bl), (th_bl, th_br), (th_br, b_br), (b_br, theta)],
        [(0.0, b_tl), (b_tl, th_tl), (th_tl, th_tr), (th_tr, b_tr), (b_tr, theta)],
        [(0.0, b_tl), (b_tl, th_tl), (th_tl, th_tr), (th_tr, b_tr), (b_tr, theta)],
    ]
    ring_radii = [
        [(cfg.r_shaft, r_c), (cfg.r_shaft, r_c), (cfg.r_shaft, r_bot),
         (cfg.r_shaft, r_c), (cfg.r_shaft, r_c)],
        [(r_c, r_t), (r_c, r_t), (r_bot, r_top), (r_c, r_t), (r_c, r_t)],
        [(r_t, cfg.r_rotor), (r_t, cfg.r_rotor), (r_top, cfg.r_rotor),
         (r_t, cfg.r_rotor), (r_t, cfg.r_rotor)],
        [(cfg.r_rotor, cfg.r_airgap)] * 5,
    ]
    patches = []
    for ring in range(4):
        for zone in range(5):
            mat = ring_materials[ring][zone]
            meta = {
                "ring": ring,
                "zone": zone,
                "theta_span": list(zone_spans[ring][zone]),
                "r_span": list(ring_radii[ring][zone]),
            }
            patches.append(
                _ruled_patch(levels[ring][zone], levels[ring + 1][zone], mat, "rotor", meta=meta)
            )
    return patches


def _stator_patches(cfg: MachineConfig) -> list[Patch]:
    theta = cfg.sector_angle
    slot = math.radians(cfg.slot_span_deg)
    iron_span = (theta - 3 * slot) / 4.0
    if iron_span <= 0:
        raise GeometryError("slot_span: three slots exceed the sector angle")
    widths = [iron_span, slot, iron_span, slot, iron_span, slot, iron_span]
    breaks = np.concatenate([[0.0], np.cumsum(widths)])
    rings = [
        (cfg.r_airgap, cfg.r_stator_in, "air"),
        (cfg.r_stator_in, cfg.r_slot_top, "slot"),
        (cfg.r_slot_top, cfg.r_stator_out, "iron"),
    ]
    patches = []
    for ring, (r0, r1, kind) in enumerate(rings):
        for zone in range(7):
            th_a, th_b = breaks[zone], breaks[zone + 1]
            is_coil = kind == "slot" and zone % 2 == 1
            mat = "coil" if is_coil else ("iron" if kind == "slot" else kind)
            phase = zone // 2 if is_coil else None
            meta = {"ring": ring, "zone": zone, "theta_span": [th_a, th_b], "r_span": [r0, r1]}
            patches.append(
                _ruled_patch(
                    _arc_rail(r0, th_a, th_b), _arc_rail(r1, th_a, th_b),
                    mat, "stator", phase=phase, meta=meta,
                )
            )
    return patches


def _rotate_patch(patch: Patch, angle: float) -> None:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    patch.control_points[:] = patch.control_points @ rot.T
    span = patch.meta.get("theta_span")
    if span is not None:
        patch.meta["theta_span"] = [span[0] + angle, span[1] + angle]


def build_machine_geometry(P: ParamVector, cfg: MachineConfig | None = None) -> MultiPatchModel:
    """Construct the parametric sector model; rotor patches are rotated by alpha."""
    cfg = cfg or MachineConfig()
    violations = P.range_violations()
    if violations:
        warnings.warn("parameters outside the design ranges: " + "; ".join(violations))
    check_feasibility(P, cfg)

    alpha = math.radians(P.alpha_deg)
    rotor = _rotor_patches(P, cfg)
    for p in rotor:
        _rotate_patch(p, alpha)
    stator = _stator_patches(cfg)
    patches = rotor + stator
    n_rot = len(rotor)

    tags: dict[tuple[int, str], str] = {}
    for i, p in enumerate(patches):
        ring = p.meta["ring"]
        zone = p.meta["zone"]
        if p.subdomain == "rotor":
            if ring == 0:
                tags[(i, "u0")] = "dirichlet"
            if ring == 3:
                tags[(i, "u1")] = "airgap"
            if zone == 0:
                tags[(i, "v0")] = "antiperiodic_master"
            if zone == 4:
                tags[(i, "v1")] = "antiperiodic_slave"
        else:
            if ring == 0:
                tags[(i, "u0")] = "airgap"
            if ring == 2:
                tags[(i, "u1")] = "dirichlet"
            if zone == 0:
                tags[(i, "v0")] = "antiperiodic_master"
            if zone == 6:
                tags[(i, "v1")] = "antiperiodic_slave"

    model = MultiPatchModel(
        patches=patches,
        interfaces=match_interfaces(patches),
        boundary_tags=tags,
        pole_pairs=cfg.pole_pairs,
        sector_angle=cfg.sector_angle,
        meta={
            "kind": "machine-sector",
            "alpha_rad": alpha,
            "params": P.as_array().tolist(),
            "r_airgap": cfg.r_airgap,
            "r_rotor": cfg.r_rotor,
            "r_stator_in": cfg.r_stator_in,
            "length": cfg.length,
            "n_rotor_patches": n_rot,
        },
    )
    return model


def machine_materials(model: MultiPatchModel, cfg: MachineConfig | None = None) -> list[Material]:
    """Per-patch materials for a built machine model.

    Magnet remanence points along the pole axis (the sector bisector, tied
    to the rotor frame).  The three slots carry the winding belts A, -C, B
    (successive 60-degree electrical shifts), which produces a mostly
    forward-rotating MMF wave; the electrical angle tracks the rotor
    position plus a fixed torque-optimal offset, so the operating point is
    synchronous and the torque is nearly independent of alpha.
    """
    cfg = cfg or MachineConfig()
    alpha = model.meta.get("alpha_rad", 0.0)
    th_c = 0.5 * model.sector_angle
    beta = th_c + alpha
    phi_e = model.pole_pairs * alpha + math.radians(cfg.phase_offset_deg)
    phase_current = [math.sin(phi_e - k * math.pi / 3.0) for k in range(3)]
    air = constant_reluctivity(NU0)
    out = []
    for p in model.patches:
        if p.material_tag == "iron":
            out.append(Material(reluctivity=cfg.iron))
        elif p.material_tag == "magnet":
            out.append(Material(reluctivity=air, b_rem=cfg.b_rem, beta=beta))
        elif p.material_tag == "coil":
            out.append(Material(reluctivity=air, j_src=cfg.j_peak * phase_current[p.phase]))
        else:
            out.append(Material(reluctivity=air))
    return out
