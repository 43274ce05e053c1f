"""End-to-end acceptance checks.

Each test covers one numbered acceptance criterion and prints a single
PASS/FAIL line (run with ``pytest -s`` to see them). The desk-scale pipeline
run (128 train / 32 test / 32 validation snapshots) is built once per module
and shared by the criteria that need it.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from igafield import mlp, pod
from igafield.geometry import MultiPatchModel, refine
from igafield.machine import MachineConfig, ParamVector, build_machine_geometry, \
    machine_materials
from igafield.magnetostatics import (assemble_coupling, assemble_rhs,
                                     assemble_stiffness, build_dofmaps,
                                     evaluate_field, solve_nonlinear)
from igafield.pipeline import (PipelineConfig, bench, generate_snapshots,
                               run_evaluation, run_pod, run_training)
from igafield.postprocess import (MU0, _locate_on_circle,
                                  maxwell_stress_integral, seminorm_error,
                                  torque)
from igafield.splines import KnotVector, WeightVector, eval_bspline, eval_nurbs

from test_geometry import annulus_patch
from test_magnetostatics import (_materials_for, coupled_annulus_models,
                                 dirichlet_square_model, l2_error,
                                 poisson_solve)


def report(num, ok, detail):
    print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale pipeline run


DESK = PipelineConfig()          # 128/32/32, two refinements, m=20, [64, 64]
DESK_GAP = replace(DESK, pod_modes=24, airgap_only=True)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """One snapshot set, two surrogate chains: full-field and air-gap."""
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    store = generate_snapshots(DESK, root / "snapshots", workers=4)
    out = {"store": store}
    for name, cfg in (("full", DESK), ("gap", DESK_GAP)):
        basis, W = run_pod(store, cfg, root / name / "pod")
        model, _ = run_training(store, basis, W, cfg, root / name / "train")
        rep = run_evaluation(store, basis, W, model, cfg, root / name / "eval")
        out[name] = {"basis": basis, "W": W, "model": model, "report": rep}
    out["elapsed"] = time.perf_counter() - t0
    out["root"] = root
    return out


# ---------------------------------------------------------------------------
# 1. basis correctness


def _random_knots(rng):
    p = int(rng.integers(1, 5))
    n_elem = int(rng.integers(2, 7))
    base = np.linspace(0.0, 1.0, n_elem + 1)[1:-1]
    interior = base + rng.uniform(-0.3, 0.3, base.size) / n_elem
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(knots, p)


def test_criterion_01_basis_correctness():
    rng = np.random.default_rng(42)
    h = 1e-5
    worst = 0.0
    t0 = time.perf_counter()
    for case in range(1000):
        kv = _random_knots(rng)
        rational = case % 2 == 1
        w = WeightVector(rng.uniform(0.5, 2.0, kv.n)) if rational else None

        def ev(xi, order):
            if rational:
                return eval_nurbs(kv, w, xi, order)
            return eval_bspline(kv, xi, order)

        xi = float(rng.uniform(0.01, 0.99))
        e = ev(xi, 1)
        assert np.all(e.values >= -1e-14)
        assert abs(e.values.sum() - 1.0) < 1e-12
        lo, hi = ev(xi - h, 0), ev(xi + h, 0)
        if lo.span != hi.span:
            continue    # finite difference would straddle a knot
        fd = (hi.values - lo.values) / (2 * h)
        scale = max(1.0, float(np.abs(fd).max()))
        worst = max(worst, float(np.abs(fd - e.derivs[0]).max()) / scale)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 5.0
    report(1, ok, f"1000 random bases: worst derivative mismatch {worst:.2e} "
                  f"(limit 1e-6), {elapsed:.2f} s (limit 5 s)")


# ---------------------------------------------------------------------------
# 2. geometry exactness


def test_criterion_02_geometry_exactness():
    r0, r1 = 1.0, 2.0
    patch = annulus_patch(r0, r1, 0.0, 0.5 * math.pi)
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.0, 1.0, (50, 2))
    radius_err = 0.0
    for u, v in pts:
        x = patch.evaluate((u, v), 0)
        radius_err = max(radius_err, abs(np.hypot(x[0], x[1]) - (r0 + (r1 - r0) * u)))
    model = MultiPatchModel(patches=[patch], interfaces=[], boundary_tags={})
    fine = refine(model, 2)
    refine_err = 0.0
    for u, v in pts:
        a = model.patches[0].evaluate((u, v), 0)
        b = fine.patches[0].evaluate((u, v), 0)
        refine_err = max(refine_err, float(np.abs(a - b).max()))
    ok = radius_err < 1e-12 and refine_err < 1e-10
    report(2, ok, f"quarter-annulus radius error {radius_err:.2e} (limit 1e-12), "
                  f"refinement displacement {refine_err:.2e} (limit 1e-10)")


# ---------------------------------------------------------------------------
# 3. solver convergence order


def test_criterion_03_manufactured_solution_order():
    exact = lambda x, y: math.sin(math.pi * x) * math.sin(math.pi * y)  # noqa: E731
    source = lambda x, y: 2 * math.pi**2 * exact(x, y)  # noqa: E731
    t0 = time.perf_counter()
    orders = {}
    for p in (1, 2):
        errors = []
        for n_elem in (4, 8, 16):
            model = dirichlet_square_model(p, n_elem)
            maps, u = poisson_solve(model, source)
            errors.append(l2_error(model, maps, u, exact))
        orders[p] = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    elapsed = time.perf_counter() - t0
    ok = elapsed < 60.0 and all(abs(o - (p + 1)) < 0.2
                                for p, os_ in orders.items() for o in os_)
    report(3, ok, f"L2 orders p=1: {orders[1][0]:.2f}/{orders[1][1]:.2f}, "
                  f"p=2: {orders[2][0]:.2f}/{orders[2][1]:.2f} "
                  f"(targets 2 and 3 +/- 0.2), {elapsed:.1f} s (limit 60 s)")


# ---------------------------------------------------------------------------
# 4. mortar consistency


def _mortar_vs_monolithic():
    mono, split = coupled_annulus_models()
    mono, split = refine(mono, 1), refine(split, 1)
    maps_m = build_dofmaps(mono)
    mats = _materials_for(mono)
    Ks, _ = assemble_stiffness(mono, mats, maps_m)
    bs = assemble_rhs(mono, mats, maps_m)
    u_mono = spla.spsolve(Ks["rotor"].tocsc(), bs["rotor"])

    maps_s = build_dofmaps(split)
    Ks, _ = assemble_stiffness(split, mats, maps_s)
    bs = assemble_rhs(split, mats, maps_s)
    n_trace = split.patches[0].shape[1]
    from numpy.polynomial.legendre import Legendre
    fns = [(lambda x, y, j=j: Legendre.basis(j)(4.0 * math.atan2(y, x) / math.pi - 1.0))
           for j in range(n_trace)]
    G_a = assemble_coupling(split, maps_s.rotor, [(0, "u1")], fns)
    G_b = assemble_coupling(split, maps_s.stator, [(1, "u0")], fns)
    A = sp.bmat([[Ks["rotor"], None, G_a],
                 [None, Ks["stator"], -G_b],
                 [G_a.T, -G_b.T, None]]).tocsc()
    rhs = np.concatenate([bs["rotor"], bs["stator"], np.zeros(n_trace)])
    x = spla.spsolve(A, rhs)
    n_a = maps_s.rotor.n_free
    worst = 0.0
    for pi in range(2):
        coeff_mono = maps_m.rotor.patch_coefficients(pi, u_mono)
        dmap = maps_s.rotor if pi == 0 else maps_s.stator
        block = x[:n_a] if pi == 0 else x[n_a:n_a + maps_s.stator.n_free]
        worst = max(worst, float(np.abs(coeff_mono - dmap.patch_coefficients(pi, block)).max()))
    return worst


def _gap_jump(model, maps, mats, H):
    """Relative RMS jump of A_z across the air-gap coupling circle."""
    sol = solve_nonlinear(model, mats, maps, H=H)
    r_ag = model.meta["r_airgap"]
    alpha = model.meta["alpha_rad"]
    rot = [pi for pi in model.patches_of("rotor")
           if model.patches[pi].material_tag == "air"]
    sta = [pi for pi in model.patches_of("stator")
           if model.patches[pi].material_tag == "air"]
    jumps, mags = [], []
    for th in np.linspace(alpha + 0.02, math.pi - 0.02, 60):
        pr, xr = _locate_on_circle(model, rot, r_ag - 1e-7, th)
        ps, xs = _locate_on_circle(model, sta, r_ag + 1e-7, th)
        ar, _ = evaluate_field(model, sol, pr, tuple(xr))
        as_, _ = evaluate_field(model, sol, ps, tuple(xs))
        jumps.append(ar - as_)
        mags.append(ar)
    return float(np.sqrt(np.mean(np.square(jumps)) / np.mean(np.square(mags))))


def test_criterion_04_mortar_consistency():
    coeff_err = _mortar_vs_monolithic()
    cfg = MachineConfig()
    model = refine(build_machine_geometry(ParamVector.midpoint(), cfg), 2)
    maps = build_dofmaps(model)
    mats = machine_materials(model, cfg)
    jumps = [_gap_jump(model, maps, mats, H) for H in (2, 4, 8)]
    ok = coeff_err < 1e-8 and jumps[0] > jumps[1] > jumps[2]
    report(4, ok, f"mortar vs monolithic coefficients {coeff_err:.2e} (limit 1e-8); "
                  f"gap jump H=2/4/8: {jumps[0]:.4f}/{jumps[1]:.4f}/{jumps[2]:.4f} "
                  f"(monotone decrease)")


# ---------------------------------------------------------------------------
# 5. POD properties


def test_criterion_05_pod_properties():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(30, 10))
    W = np.eye(30)
    basis = pod.weighted_pod(pod.SnapshotMatrix(data), W, m=6)
    ortho = float(np.abs(basis.Q.T @ W @ basis.Q - np.eye(6)).max())
    U = np.linalg.svd(data, full_matrices=False)[0][:, :6]
    # sine-based principal angles (accurate near zero, unlike arccos)
    resid = basis.Q - U @ (U.T @ basis.Q)
    angle = float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))
    means = []
    for m in range(1, 11):
        b = pod.weighted_pod(pod.SnapshotMatrix(data), W, m=m)
        errs = [np.linalg.norm(u - pod.reconstruct(b, pod.project(b, W, u)))
                / np.linalg.norm(u) for u in data.T]
        means.append(float(np.mean(errs)))
    monotone = all(means[i + 1] <= means[i] + 1e-12 for i in range(9))
    ok = ortho < 1e-10 and angle < 1e-8 and monotone and means[-1] < 1e-8
    report(5, ok, f"orthonormality {ortho:.2e} (limit 1e-10), principal angle vs "
                  f"SVD {angle:.2e} (limit 1e-8), reconstruction monotone "
                  f"{monotone}, full-rank error {means[-1]:.2e} (limit 1e-8)")


# ---------------------------------------------------------------------------
# 6. POD decay on the desk snapshots


def test_criterion_06_pod_decay(desk, tmp_path):
    store = desk["store"]
    basis, W = run_pod(store, replace(DESK, pod_modes=32), tmp_path / "pod32")
    idx = store.ok_indices(DESK.split_indices("train"))
    ms = (1, 2, 4, 8, 16, 24, 32)
    means = []
    for m in ms:
        Q = basis.Q[:, :m]
        errs = []
        for i in idx:
            u = store.load_sample(i)
            errs.append(seminorm_error(u, Q @ (Q.T @ (W @ u)), W))
        means.append(float(np.mean(errs)))
    monotone = all(means[i + 1] <= means[i] + 1e-12 for i in range(len(ms) - 1))
    ok = monotone and means[-1] < 0.01 and len(idx) == 128
    decay = ", ".join(f"m={m}: {e*100:.3f}%" for m, e in zip(ms, means))
    report(6, ok, f"mean reconstruction error on 128 snapshots ({decay}); "
                  f"monotone {monotone}, below 1% within 32 modes")


# ---------------------------------------------------------------------------
# 7. gradient check


def test_criterion_07_gradient_check():
    rng = np.random.default_rng(17)
    worst = 0.0
    h = 1e-6
    t0 = time.perf_counter()
    for check in range(20):
        sizes = [int(rng.integers(2, 5))] + \
                [int(rng.integers(3, 8)) for _ in range(int(rng.integers(1, 3)))] + \
                [int(rng.integers(1, 5))]
        X = rng.normal(size=(6, sizes[0]))
        Y = rng.normal(size=(6, sizes[-1])) + 1.0
        model = mlp.init_model(sizes, seed=100 + check,
                               input_norm=mlp.Normalizer.minmax(X),
                               output_norm=mlp.Normalizer.zscore(Y))
        for p in model.parameters():
            # zero-initialized biases put dead samples exactly on the ReLU
            # kink, where the subgradient and a finite difference disagree
            p += rng.normal(scale=0.1, size=p.shape)
        l2 = float(rng.uniform(0.0, 1e-3))
        wg, bg = mlp.backward(model, X, Y, l2)
        grads = [g for pair in zip(wg, bg) for g in pair]
        for p, g in zip(model.parameters(), grads):
            fp_, fg_ = p.ravel(), g.ravel()
            for i in rng.choice(fp_.size, size=min(4, fp_.size), replace=False):
                orig = fp_[i]
                fp_[i] = orig + h
                up = mlp.batch_loss(model, X, Y, l2)
                fp_[i] = orig - h
                dn = mlp.batch_loss(model, X, Y, l2)
                fp_[i] = orig
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - fg_[i]) / max(1.0, abs(fd)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 10.0
    report(7, ok, f"20 random networks: worst backprop/finite-difference "
                  f"mismatch {worst:.2e} (limit 1e-5), {elapsed:.2f} s (limit 10 s)")


# ---------------------------------------------------------------------------
# 8. end-to-end surrogate quality


def test_criterion_08_surrogate_quality(desk):
    rep = desk["full"]["report"]
    val = rep.splits["validation"]
    elapsed = desk["elapsed"]
    pod_ok = val["pod_mean"] < 0.5 * val["mean"]
    ok = (val["mean"] <= 0.05 and pod_ok and val["pod_mean"] < val["mean"]
          and elapsed <= 1800.0)
    report(8, ok, f"validation field error {val['mean']*100:.2f}% (limit 5%), "
                  f"POD floor {val['pod_mean']*100:.2f}% "
                  f"(< 0.5x network error: {pod_ok}), "
                  f"pipeline wall time {elapsed/60:.1f} min (limit 30 min)")


# ---------------------------------------------------------------------------
# 9. torque


def test_criterion_09_torque(desk):
    # analytic cases on the stress quadrature
    t_zero = maxwell_stress_integral(lambda th: (math.sin(th), 0.0),
                                     r=0.8, length=1.0, theta_span=(0.0, 2 * math.pi),
                                     multiplicity=1, n_quadrature=16)
    br, bp, r, L = 0.7, 0.4, 1.3, 1.1
    expected = 2 * math.pi * r * r * L * br * bp / MU0
    t_full_circle = maxwell_stress_integral(lambda th: (br, bp), r=r, length=L,
                                            theta_span=(0.0, 2 * math.pi),
                                            multiplicity=1, n_quadrature=16)
    t_sector = maxwell_stress_integral(lambda th: (br, bp), r=r, length=L,
                                       theta_span=(0.0, math.pi),
                                       multiplicity=2, n_quadrature=16)
    exact_ok = (t_zero == 0.0
                and abs(t_full_circle - expected) <= 1e-10 * expected
                and abs(t_sector - expected) <= 1e-10 * expected)

    # surrogate vs full-order torque on the validation designs
    tq = desk["gap"]["report"].torque
    surrogate_ok = tq["mean_rel_error"] <= 0.05 and tq["n"] == 32

    # two-radius consistency of the full-order torque on a fine mesh
    cfg = MachineConfig()
    model = refine(build_machine_geometry(ParamVector.midpoint(), cfg), 5)
    sol = solve_nonlinear(model, machine_materials(model, cfg),
                          build_dofmaps(model), H=4)
    r_ag = model.meta["r_airgap"]
    t1 = torque(model, sol, r=r_ag - 0.25e-3, n_quadrature=256).torque
    t2 = torque(model, sol, r=r_ag + 0.25e-3, n_quadrature=256).torque
    spread = abs(t1 - t2) / abs(t1)
    ok = exact_ok and surrogate_ok and spread <= 0.02
    report(9, ok, f"analytic cases exact {exact_ok}; surrogate torque error "
                  f"{tq['mean_rel_error']*100:.2f}% on {tq['n']} validation "
                  f"designs (limit 5%); two-radius spread {spread*100:.2f}% "
                  f"(limit 2%)")


# ---------------------------------------------------------------------------
# 10. speed-up


def test_criterion_10_speedup(desk):
    cfg = replace(DESK, bench_solves=2, bench_predictions=500)
    result = bench(cfg, desk["full"]["model"], desk["full"]["basis"])
    ok = result["speedup"] >= 100.0
    report(10, ok, f"full solve {result['full_solve_s']*1e3:.0f} ms vs surrogate "
                   f"{result['surrogate_predict_s']*1e6:.0f} us: speed-up "
                   f"{result['speedup']:.0f}x (limit 100x)")


# ---------------------------------------------------------------------------
# 11. determinism


def test_criterion_11_determinism(tmp_path):
    cfg = PipelineConfig(refine_levels=1, harmonics=2, n_train=8, n_test=2,
                         n_validation=2, pod_modes=4, hidden_layers=[16],
                         epochs=300, patience=1000, test_interval=50,
                         torque_quadrature=16, seed=0)

    def run(root):
        store = generate_snapshots(cfg, root / "snapshots", workers=1)
        basis, W = run_pod(store, cfg, root / "pod")
        model, _ = run_training(store, basis, W, cfg, root / "train")
        run_evaluation(store, basis, W, model, cfg, root / "eval")
        files = sorted(str(p.relative_to(root)) for p in root.rglob("*")
                       if p.is_file() and p.suffix in (".bin", ".pod", ".mlp", ".json"))
        return root, files

    ra, fa = run(tmp_path / "a")
    rb, fb = run(tmp_path / "b")
    identical = fa == fb and all(
        (ra / f).read_bytes() == (rb / f).read_bytes() for f in fa)
    ok = identical and len(fa) >= 15   # 12 snapshots + manifest + basis + model + report
    report(11, ok, f"two seeded runs: {len(fa)} artifacts byte-identical: {identical}")
