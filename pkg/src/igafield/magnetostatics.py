"""Galerkin assembly and solution of the 2D magnetostatic problem.

The out-of-plane vector potential A_z is discretized with the patches' own
NURBS basis (isogeometric).  Dirichlet rows/columns are eliminated,
anti-periodic pairs are folded with sign -1, and the rotor-stator air-gap
interface is coupled weakly through a truncated Fourier (harmonic)
multiplier, which turns rotor rotation into a block rotation matrix on the
multiplier coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigError, SolverError
from .geometry import MultiPatchModel, Patch
from .materials import Material
from .splines import eval_tensor_2d, gauss_rule

# ---------------------------------------------------------------------------
# degree-of-freedom management


class DofMap:
    """Global numbering for one block of patches.

    Shared control points on conforming interfaces collapse to one global
    index; Dirichlet indices are eliminated; anti-periodic slave indices are
    folded onto their masters with sign -1.
    """

    def __init__(self, model: MultiPatchModel, patch_indices: list[int]):
        self.model = model
        self.patch_indices = list(patch_indices)
        self._build()

    def _build(self):
        model = self.model
        offsets = {}
        total = 0
        for pi in self.patch_indices:
            nu, nv = model.patches[pi].shape
            offsets[pi] = total
            total += nu * nv
        parent = np.arange(total)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(i, j):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

        def flat(pi, iu, iv):
            nv = model.patches[pi].shape[1]
            return offsets[pi] + iu * nv + iv

        in_block = set(self.patch_indices)
        for a, ea, b, eb, orient in model.interfaces:
            if a not in in_block or b not in in_block:
                continue
            ia = model.patches[a].edge_indices(ea)
            ib = model.patches[b].edge_indices(eb)
            if orient < 0:
                ib = ib[::-1]
            for (ua, va), (ub, vb) in zip(ia, ib):
                union(flat(a, ua, va), flat(b, ub, vb))

        rep_ids = {}
        self.gidx = {}
        for pi in self.patch_indices:
            nu, nv = model.patches[pi].shape
            g = np.empty((nu, nv), dtype=int)
            for iu in range(nu):
                for iv in range(nv):
                    r = find(flat(pi, iu, iv))
                    if r not in rep_ids:
                        rep_ids[r] = len(rep_ids)
                    g[iu, iv] = rep_ids[r]
            self.gidx[pi] = g
        self.n_global = len(rep_ids)

        dirichlet = np.zeros(self.n_global, dtype=bool)
        for (pi, edge), tag in model.boundary_tags.items():
            if pi in in_block and tag == "dirichlet":
                idx = model.patches[pi].edge_indices(edge)
                dirichlet[self.gidx[pi][idx[:, 0], idx[:, 1]]] = True
        self.dirichlet = dirichlet

        self.antiperiodic_pairs = self._match_antiperiodic(in_block)

        slave_of = {}
        for mg, sg in self.antiperiodic_pairs:
            slave_of[sg] = mg
        self.free = np.full(self.n_global, -1, dtype=int)
        self.sign = np.zeros(self.n_global)
        n_free = 0
        for g in range(self.n_global):
            if dirichlet[g] or g in slave_of:
                continue
            self.free[g] = n_free
            self.sign[g] = 1.0
            n_free += 1
        for sg, mg in slave_of.items():
            if dirichlet[sg]:
                continue
            self.free[sg] = self.free[mg]
            self.sign[sg] = -1.0
        self.n_free = n_free

    def _match_antiperiodic(self, in_block):
        model = self.model
        masters, slaves = [], []
        for (pi, edge), tag in model.boundary_tags.items():
            if pi not in in_block:
                continue
            if tag == "antiperiodic_master":
                masters.append((pi, edge))
            elif tag == "antiperiodic_slave":
                slaves.append((pi, edge))
        if not slaves:
            return []
        th = model.sector_angle
        c, s = math.cos(th), math.sin(th)
        back = np.array([[c, s], [-s, c]])  # rotation by -sector_angle
        pairs = []
        for spi, sedge in slaves:
            scp = model.patches[spi].edge_control_points(sedge) @ back.T
            sidx = model.patches[spi].edge_indices(sedge)
            hit = None
            for mpi, medge in masters:
                mcp = model.patches[mpi].edge_control_points(medge)
                if mcp.shape != scp.shape:
                    continue
                if np.allclose(mcp, scp, atol=1e-8, rtol=0):
                    hit = (mpi, medge, False)
                    break
                if np.allclose(mcp, scp[::-1], atol=1e-8, rtol=0):
                    hit = (mpi, medge, True)
                    break
            if hit is None:
                raise AssemblyError(
                    f"anti-periodic slave edge ({spi},{sedge}) has no matching master"
                )
            mpi, medge, rev = hit
            midx = model.patches[mpi].edge_indices(medge)
            if rev:
                sidx = sidx[::-1]
            for (mu, mv), (su, sv) in zip(midx, sidx):
                mg = self.gidx[mpi][mu, mv]
                sg = self.gidx[spi][su, sv]
                if mg == sg:
                    continue
                if self.dirichlet[mg] or self.dirichlet[sg]:
                    continue
                pairs.append((mg, sg))
        return sorted(set(pairs))

    def element_dofs(self, pi: int, indices: np.ndarray):
        """(free_index, sign) for local tensor-basis indices of patch ``pi``."""
        g = self.gidx[pi][indices[:, 0], indices[:, 1]]
        return self.free[g], self.sign[g]

    def patch_coefficients(self, pi: int, u_free: np.ndarray) -> np.ndarray:
        """Control coefficients of A_z on one patch (Dirichlet -> 0, slaves folded)."""
        g = self.gidx[pi]
        out = np.zeros(g.shape)
        mask = self.free[g] >= 0
        out[mask] = self.sign[g][mask] * u_free[self.free[g][mask]]
        return out


@dataclass
class SubdomainMaps:
    rotor: DofMap | None
    stator: DofMap | None

    def blocks(self):
        out = []
        if self.rotor is not None:
            out.append(("rotor", self.rotor))
        if self.stator is not None:
            out.append(("stator", self.stator))
        return out


def build_dofmaps(model: MultiPatchModel) -> SubdomainMaps:
    """One DofMap per coupled block; models without a stator become one block."""
    rot = model.patches_of("rotor")
    sta = model.patches_of("stator")
    if not sta:
        return SubdomainMaps(rotor=DofMap(model, rot or list(range(len(model.patches)))), stator=None)
    if not rot:
        return SubdomainMaps(rotor=None, stator=DofMap(model, sta))
    return SubdomainMaps(rotor=DofMap(model, rot), stator=DofMap(model, sta))


# ---------------------------------------------------------------------------
# element quadrature loop


def _patch_elements(patch: Patch, n_gauss: int | None):
    """Yield (xi, weight) quadrature data per element of a patch."""
    ng = n_gauss or (max(patch.kv_u.p, patch.kv_v.p) + 1)
    rule = gauss_rule(ng)
    for su, au, bu in patch.kv_u.spans():
        for sv, av, bv in patch.kv_v.spans():
            gu, wu = rule.mapped(au, bu)
            gv, wv = rule.mapped(av, bv)
            pts = [((xu, xv), wwu * wwv) for xu, wwu in zip(gu, wu) for xv, wwv in zip(gv, wv)]
            yield (su, sv), pts


def _assemble_block(
    model: MultiPatchModel,
    materials: list[Material],
    dmap: DofMap,
    lin_coeffs: np.ndarray | None,
    nu_override: dict | None,
    n_gauss: int | None,
    unit_nu: bool,
):
    """Stiffness block for one DofMap; returns (K, nu_eval) with nu_eval the
    per-quadrature-point reluctivity table used (keyed by patch index)."""
    rows, cols, vals = [], [], []
    nu_eval: dict[int, list[float]] = {}
    for pi in dmap.patch_indices:
        patch = model.patches[pi]
        mat = materials[pi]
        relu = mat.reluctivity if mat is not None else None
        uloc = dmap.patch_coefficients(pi, lin_coeffs) if lin_coeffs is not None else None
        over = nu_override.get(pi) if nu_override else None
        nus = []
        qp = 0
        for _, pts in _patch_elements(patch, n_gauss):
            nd = (patch.kv_u.p + 1) * (patch.kv_v.p + 1)
            ke = np.zeros((nd, nd))
            tb0 = None
            for xi, w in pts:
                tb = eval_tensor_2d(patch.kv_u, patch.kv_v, patch.weights, xi, 1)
                tb0 = tb
                cps = patch.control_points[tb.indices[:, 0], tb.indices[:, 1]]
                jac = (tb.grad.T @ cps).T  # J[i,j] = dx_i / dxi_j
                det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
                if det <= 0 or not np.isfinite(det):
                    raise AssemblyError(
                        f"singular Jacobian (det={det:.3e}) in patch {pi} at xi={xi}"
                    )
                gx = tb.grad @ np.linalg.inv(jac)
                if unit_nu:
                    nu = 1.0
                elif over is not None:
                    nu = float(over[qp])
                elif relu.is_nonlinear and uloc is not None:
                    ga = gx.T @ uloc[tb.indices[:, 0], tb.indices[:, 1]]
                    nu = float(relu(ga @ ga))
                else:
                    nu = float(relu(0.0))
                nus.append(nu)
                qp += 1
                ke += (nu * w * det) * (gx @ gx.T)
            fi, sg = dmap.element_dofs(pi, tb0.indices)
            keep = fi >= 0
            kfi, ksg = fi[keep], sg[keep]
            kke = (ksg[:, None] * ksg[None, :]) * ke[np.ix_(keep, keep)]
            rows.append(np.repeat(kfi, kfi.size))
            cols.append(np.tile(kfi, kfi.size))
            vals.append(kke.ravel())
        nu_eval[pi] = np.array(nus)
    if rows:
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dmap.n_free, dmap.n_free),
        ).tocsr()
    else:
        K = sp.csr_matrix((dmap.n_free, dmap.n_free))
    return K, nu_eval


def assemble_stiffness(
    model: MultiPatchModel,
    materials: list[Material],
    maps: SubdomainMaps,
    linearization_field=None,
    nu_override: dict | None = None,
    n_gauss: int | None = None,
):
    """Stiffness blocks K_ij = int nu grad(B_i) . grad(B_j) dx per subdomain.

    ``linearization_field`` supplies the current iterate coefficients
    (per-block vectors) for nonlinear materials; absent means nu at B=0.
    Returns ({block_name: K}, {block_name: nu tables}).
    """
    Ks, nu_tabs = {}, {}
    for name, dmap in maps.blocks():
        lin = None
        if linearization_field is not None:
            lin = linearization_field.get(name) if isinstance(linearization_field, dict) else None
        K, nu_eval = _assemble_block(model, materials, dmap, lin, nu_override, n_gauss, False)
        Ks[name] = K
        nu_tabs[name] = nu_eval
    return Ks, nu_tabs


def assemble_rhs(
    model: MultiPatchModel,
    materials: list[Material],
    maps: SubdomainMaps,
    n_gauss: int | None = None,
    source_fn=None,
):
    """Load vectors: uniform coil current density plus the magnet term
    int nu (B_rem,y, -B_rem,x) . grad v dx.  ``source_fn(x, y)`` adds a
    generic volumetric source (used by manufactured-solution tests)."""
    out = {}
    for name, dmap in maps.blocks():
        b = np.zeros(dmap.n_free)
        for pi in dmap.patch_indices:
            patch = model.patches[pi]
            mat = materials[pi]
            has_coil = mat.j_src != 0.0
            has_mag = mat.b_rem != 0.0
            if not (has_coil or has_mag or source_fn is not None):
                continue
            brx = mat.b_rem * math.cos(mat.beta)
            bry = mat.b_rem * math.sin(mat.beta)
            nu_mag = float(mat.reluctivity(mat.b_rem**2))
            for _, pts in _patch_elements(patch, n_gauss):
                nd = (patch.kv_u.p + 1) * (patch.kv_v.p + 1)
                be = np.zeros(nd)
                tb0 = None
                for xi, w in pts:
                    tb = eval_tensor_2d(patch.kv_u, patch.kv_v, patch.weights, xi, 1)
                    tb0 = tb
                    cps = patch.control_points[tb.indices[:, 0], tb.indices[:, 1]]
                    jac = (tb.grad.T @ cps).T
                    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
                    if has_coil:
                        be += (mat.j_src * w * det) * tb.values
                    if source_fn is not None:
                        x = tb.values @ cps
                        be += (source_fn(x[0], x[1]) * w * det) * tb.values
                    if has_mag:
                        gx = tb.grad @ np.linalg.inv(jac)
                        be += (nu_mag * w * det) * (bry * gx[:, 0] - brx * gx[:, 1])
                fi, sg = dmap.element_dofs(pi, tb0.indices)
                keep = fi >= 0
                np.add.at(b, fi[keep], sg[keep] * be[keep])
        out[name] = b
    return out


# ---------------------------------------------------------------------------
# harmonic mortar coupling


def admitted_harmonics(pole_pairs: int, H: int) -> list[int]:
    """Anti-periodicity admits only odd multiples of the pole-pair count."""
    if H < 1:
        raise ConfigError("harmonic count H must be >= 1")
    return [pole_pairs * (2 * j - 1) for j in range(1, H + 1)]


def assemble_coupling(
    model: MultiPatchModel,
    dmap: DofMap,
    edges: list[tuple[int, str]],
    fns,
    n_sub: int = 8,
):
    """Generic interface coupling G[a, j] = int_edge B_a(x) f_j(x) ds.

    ``fns`` is a list of callables on physical coordinates.  Quadrature is
    composite (n_sub x 4-point Gauss per knot span) to resolve oscillatory
    multiplier functions.
    """
    rule = gauss_rule(4)
    G = np.zeros((dmap.n_free, len(fns)))
    for pi, edge in edges:
        patch = model.patches[pi]
        if edge in ("u0", "u1"):
            kv, fixed = patch.kv_v, (0.0 if edge == "u0" else 1.0)
            mk_xi = lambda t: (fixed, t)  # noqa: E731
            tang_col = 1
        else:
            kv, fixed = patch.kv_u, (0.0 if edge == "v0" else 1.0)
            mk_xi = lambda t: (t, fixed)  # noqa: E731
            tang_col = 0
        for _, a, b in kv.spans():
            edges_t = np.linspace(a, b, n_sub + 1)
            for k in range(n_sub):
                gt, gw = rule.mapped(edges_t[k], edges_t[k + 1])
                for t, w in zip(gt, gw):
                    tb = eval_tensor_2d(patch.kv_u, patch.kv_v, patch.weights, mk_xi(t), 1)
                    cps = patch.control_points[tb.indices[:, 0], tb.indices[:, 1]]
                    x = tb.values @ cps
                    tangent = tb.grad[:, tang_col] @ cps
                    ds = float(np.hypot(tangent[0], tangent[1])) * w
                    fvals = np.array([f(x[0], x[1]) for f in fns])
                    fi, sg = dmap.element_dofs(pi, tb.indices)
                    keep = fi >= 0
                    G[fi[keep]] += np.outer(sg[keep] * tb.values[keep], fvals * ds)
    return G


def _airgap_edges(model: MultiPatchModel, dmap: DofMap) -> list[tuple[int, str]]:
    block = set(dmap.patch_indices)
    return [
        (pi, edge)
        for (pi, edge), tag in sorted(model.boundary_tags.items())
        if tag == "airgap" and pi in block
    ]


def assemble_mortar(model: MultiPatchModel, maps: SubdomainMaps, H: int, n_sub: int = 8):
    """Air-gap coupling blocks G_rt, G_st against the harmonic multiplier.

    The rotor block is assembled in the rotor frame (angle theta - alpha),
    so both G blocks are independent of the rotation angle; rotation enters
    the saddle system only through the block rotation matrix.
    """
    ks = admitted_harmonics(model.pole_pairs, H)
    alpha = model.meta.get("alpha_rad", 0.0)

    def trig_fns(shift):
        fns = []
        for k in ks:
            fns.append(lambda x, y, k=k: math.cos(k * (math.atan2(y, x) - shift)))
            fns.append(lambda x, y, k=k: math.sin(k * (math.atan2(y, x) - shift)))
        return fns

    if maps.rotor is None or maps.stator is None:
        raise ConfigError("mortar coupling requires both rotor and stator blocks")
    G_rt = assemble_coupling(model, maps.rotor, _airgap_edges(model, maps.rotor), trig_fns(alpha), n_sub)
    G_st = assemble_coupling(model, maps.stator, _airgap_edges(model, maps.stator), trig_fns(0.0), n_sub)
    return G_rt, G_st


def rotation_matrix(alpha: float, H: int, pole_pairs: int = 1) -> np.ndarray:
    """Block-diagonal rotation of harmonic coefficient pairs by alpha [rad]."""
    ks = admitted_harmonics(pole_pairs, H)
    R = np.zeros((2 * H, 2 * H))
    for j, k in enumerate(ks):
        c, s = math.cos(k * alpha), math.sin(k * alpha)
        R[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[c, -s], [s, c]]
    return R


# ---------------------------------------------------------------------------
# saddle system and solves


@dataclass
class SaddleSystem:
    K_rt: sp.csr_matrix
    K_st: sp.csr_matrix | None
    G_rt: np.ndarray | None
    G_st: np.ndarray | None
    R_alpha: np.ndarray | None
    b_rt: np.ndarray
    b_st: np.ndarray | None
    harmonics: list[int] = field(default_factory=list)

    @property
    def has_mortar(self) -> bool:
        return self.G_rt is not None and self.G_rt.shape[1] > 0

    def full_matrix(self) -> sp.csr_matrix:
        if not self.has_mortar:
            if self.K_st is None:
                return self.K_rt
            return sp.block_diag([self.K_rt, self.K_st]).tocsr()
        GsR = self.G_st @ self.R_alpha
        return sp.bmat(
            [
                [self.K_rt, None, -self.G_rt],
                [None, self.K_st, GsR],
                [-self.G_rt.T, GsR.T, None],
            ],
            format="csr",
        )

    def full_rhs(self) -> np.ndarray:
        parts = [self.b_rt]
        if self.b_st is not None:
            parts.append(self.b_st)
        if self.has_mortar:
            parts.append(np.zeros(self.G_rt.shape[1]))
        return np.concatenate(parts)


@dataclass
class SaddleSolution:
    u_rt: np.ndarray
    u_st: np.ndarray
    lam: np.ndarray
    residual_norm: float
    iterations: int
    model: MultiPatchModel | None = None
    maps: SubdomainMaps | None = None

    def block(self, name: str) -> np.ndarray:
        return self.u_rt if name == "rotor" else self.u_st

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u_rt, self.u_st])


def build_saddle_system(
    model: MultiPatchModel,
    materials: list[Material],
    maps: SubdomainMaps,
    H: int = 8,
    n_gauss: int | None = None,
    linearization_field=None,
    nu_override=None,
) -> SaddleSystem:
    Ks, _ = assemble_stiffness(model, materials, maps, linearization_field, nu_override, n_gauss)
    bs = assemble_rhs(model, materials, maps, n_gauss)
    if maps.stator is None or maps.rotor is None:
        key = "rotor" if maps.rotor is not None else "stator"
        return SaddleSystem(
            K_rt=Ks[key], K_st=None, G_rt=None, G_st=None, R_alpha=None,
            b_rt=bs[key], b_st=None,
        )
    G_rt, G_st = assemble_mortar(model, maps, H)
    R = rotation_matrix(model.meta.get("alpha_rad", 0.0), H, model.pole_pairs)
    return SaddleSystem(
        K_rt=Ks["rotor"], K_st=Ks["stator"], G_rt=G_rt, G_st=G_st, R_alpha=R,
        b_rt=bs["rotor"], b_st=bs["stator"],
        harmonics=admitted_harmonics(model.pole_pairs, H),
    )


def solve_linear(
    sys: SaddleSystem,
    model: MultiPatchModel | None = None,
    maps: SubdomainMaps | None = None,
    tol: float = 1e-10,
) -> SaddleSolution:
    """Direct sparse solve of the (possibly indefinite) saddle system."""
    A = sys.full_matrix().tocsc()
    b = sys.full_rhs()
    n_rt = sys.K_rt.shape[0]
    n_st = sys.K_st.shape[0] if sys.K_st is not None else 0
    n_lam = 2 * len(sys.harmonics) if sys.has_mortar else 0
    if not np.any(b):
        x = np.zeros(A.shape[0])
    else:
        try:
            lu = spla.splu(A)
            x = lu.solve(b)
            # one step of iterative refinement sharpens badly scaled
            # saddle systems (stiffness vs mortar rows differ by ~1e9)
            x += lu.solve(b - A @ x)
        except RuntimeError as exc:  # singular factorization
            raise SolverError(
                "saddle-point factorization failed; the harmonic count H may "
                f"exceed the interface resolution ({exc})"
            ) from exc
        if not np.all(np.isfinite(x)):
            raise SolverError(
                "saddle-point solve produced non-finite values; try a smaller "
                "harmonic count H or a finer interface mesh"
            )
    bn = np.linalg.norm(b)
    res = float(np.linalg.norm(A @ x - b) / bn) if bn > 0 else 0.0
    if res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
    return SaddleSolution(
        u_rt=x[:n_rt],
        u_st=x[n_rt : n_rt + n_st],
        lam=x[n_rt + n_st : n_rt + n_st + n_lam],
        residual_norm=res,
        iterations=1,
        model=model,
        maps=maps,
    )


def solve_nonlinear(
    model: MultiPatchModel,
    materials: list[Material],
    maps: SubdomainMaps,
    H: int = 8,
    tol_fp: float = 1e-6,
    max_iter: int = 200,
    relax: float = 0.3,
    n_gauss: int | None = None,
) -> SaddleSolution:
    """Anderson-accelerated Picard iteration for saturable reluctivity.

    Each step solves the system linearized at the current iterate, giving
    the fixed-point map g = F(u).  The next iterate combines the recent
    residual history (Anderson mixing with factor ``relax``), which
    converges where plainly damped Picard limit-cycles under strong
    saturation.  Convergence is measured on ||F(u) - u|| / ||u||.
    """
    any_nonlinear = any(m.reluctivity.is_nonlinear for m in materials)
    depth = 5
    nu_state = None
    u = None
    X_hist: list[np.ndarray] = []
    F_hist: list[np.ndarray] = []
    history: list[float] = []

    def linearize(vec):
        n_rt = maps.rotor.n_free
        lin = {"rotor": vec[:n_rt], "stator": vec[n_rt:]}
        _, state = assemble_stiffness(
            model, materials, maps, linearization_field=lin, n_gauss=n_gauss
        )
        return {pi: arr for name, _ in maps.blocks()
                for pi, arr in state[name].items()}

    for it in range(1, max_iter + 1):
        sys = build_saddle_system(model, materials, maps, H, n_gauss, nu_override=nu_state)
        sol = solve_linear(sys, model, maps)
        sol.iterations = it
        if not any_nonlinear:
            return sol
        g = sol.stacked()
        if u is None:
            u_next = g
        else:
            f = g - u
            update = float(np.linalg.norm(f) / max(np.linalg.norm(u), 1e-300))
            history.append(update)
            if update < tol_fp:
                n_rt = sol.u_rt.size
                return SaddleSolution(
                    u_rt=g[:n_rt], u_st=g[n_rt:], lam=sol.lam,
                    residual_norm=sol.residual_norm, iterations=it,
                    model=model, maps=maps,
                )
            X_hist.append(u)
            F_hist.append(f)
            X_hist, F_hist = X_hist[-(depth + 1):], F_hist[-(depth + 1):]
            u_next = u + relax * f
            if len(F_hist) >= 2:
                dF = np.column_stack([F_hist[i + 1] - F_hist[i]
                                      for i in range(len(F_hist) - 1)])
                dX = np.column_stack([X_hist[i + 1] - X_hist[i]
                                      for i in range(len(X_hist) - 1)])
                gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
                cand = u + relax * f - (dX + relax * dF) @ gamma
                # guard against wild extrapolation steps
                if np.all(np.isfinite(cand)) and \
                        np.linalg.norm(cand - u) <= 10.0 * np.linalg.norm(f):
                    u_next = cand
        u = u_next
        nu_state = linearize(u)
    raise SolverError(
        f"Picard iteration did not converge in {max_iter} steps; update history: "
        + ", ".join(f"{h:.2e}" for h in history[-5:])
    )


# ---------------------------------------------------------------------------
# field evaluation and reference weighting


def evaluate_field(model: MultiPatchModel, sol: SaddleSolution, patch_idx: int, xi):
    """Pointwise (A_z, B) with B = (dA/dy, -dA/dx)."""
    maps = sol.maps
    patch = model.patches[patch_idx]
    dmap = None
    for _, m in maps.blocks():
        if patch_idx in m.patch_indices:
            dmap = m
            break
    if dmap is None:
        raise ConfigError(f"patch {patch_idx} not covered by the solution's DoF maps")
    u = sol.u_rt if dmap is maps.rotor else sol.u_st
    coeffs = dmap.patch_coefficients(patch_idx, u)
    tb = eval_tensor_2d(patch.kv_u, patch.kv_v, patch.weights, xi, 1)
    cps = patch.control_points[tb.indices[:, 0], tb.indices[:, 1]]
    uloc = coeffs[tb.indices[:, 0], tb.indices[:, 1]]
    jac = (tb.grad.T @ cps).T
    gx = tb.grad @ np.linalg.inv(jac)
    a_z = float(tb.values @ uloc)
    grad = gx.T @ uloc
    return a_z, np.array([grad[1], -grad[0]])


def assemble_K0(model: MultiPatchModel, maps: SubdomainMaps, n_gauss: int | None = None):
    """Unit-material stiffness over the stacked free DoF space (no mortar rows)."""
    blocks = []
    for _, dmap in maps.blocks():
        K, _ = _assemble_block(model, [None] * len(model.patches), dmap, None, None, n_gauss, True)
        blocks.append(K)
    if len(blocks) == 1:
        return blocks[0].tocsr()
    return sp.block_diag(blocks).tocsr()
