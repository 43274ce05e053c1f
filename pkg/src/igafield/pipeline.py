"""Orchestration: design sampling, snapshot generation, reduction, training,
evaluation, prediction, and timing benchmarks.

Artifacts are deterministic for a fixed seed: snapshot payloads, the basis,
the network weights, and the evaluation report contain no timestamps or
wall-clock data.  Timing lives exclusively in the ``bench`` output.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import statistics
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mlp, pod
from .errors import ConfigError, IgafieldError, NumericalError
from .machine import (FEASIBLE_RANGES, MachineConfig, ParamVector, brauer_iron,
                      build_machine_geometry, machine_materials)
from .geometry import refine
from .magnetostatics import (SaddleSolution, SubdomainMaps, assemble_K0,
                             assemble_stiffness, build_dofmaps, solve_nonlinear)
from .postprocess import seminorm_error, torque
from .sobol import sobol_sample

PARAM_ORDER = ("mag", "mh", "mw", "alpha_deg")


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs; loadable from a JSON file."""

    ranges: dict = field(default_factory=lambda: {k: list(FEASIBLE_RANGES[k]) for k in PARAM_ORDER})
    refine_levels: int = 2
    harmonics: int = 4
    nonlinear_iron: bool = False
    n_gauss: int | None = None
    n_train: int = 128
    n_test: int = 32
    n_validation: int = 32
    sobol_skip: int = 1
    pod_modes: int | None = 20
    pod_energy: float | None = None
    airgap_only: bool = False
    hidden_layers: list = field(default_factory=lambda: [64, 64])
    learning_rate: float = 2e-3
    epochs: int = 3000
    batch_size: int | None = None
    l2_regularization: float = 1e-7
    patience: int = 50
    test_interval: int = 100
    seed: int = 0
    eval_sample_stiffness: bool = False
    torque_quadrature: int = 64
    bench_solves: int = 5
    bench_predictions: int = 1000

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.n_validation) < 1:
            raise ConfigError("sample counts must all be >= 1")
        if set(self.ranges) != set(PARAM_ORDER):
            raise ConfigError(f"ranges must cover exactly {PARAM_ORDER}")
        for k, (lo, hi) in self.ranges.items():
            if not lo < hi:
                raise ConfigError(f"range for {k} must satisfy min < max")
        if (self.pod_modes is None) == (self.pod_energy is None):
            raise ConfigError("set exactly one of pod_modes / pod_energy")

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_test + self.n_validation

    def split_indices(self, name: str) -> range:
        starts = {"train": 0, "test": self.n_train,
                  "validation": self.n_train + self.n_test}
        sizes = {"train": self.n_train, "test": self.n_test,
                 "validation": self.n_validation}
        if name not in starts:
            raise ConfigError(f"unknown split {name!r}")
        return range(starts[name], starts[name] + sizes[name])

    def machine(self) -> MachineConfig:
        if self.nonlinear_iron:
            return MachineConfig(iron=brauer_iron())
        return MachineConfig()

    def train_config(self) -> mlp.TrainConfig:
        return mlp.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            l2_regularization=self.l2_regularization,
            patience=self.patience,
            test_interval=self.test_interval,
            seed=self.seed,
        )

    def snapshot_hash(self) -> str:
        """Hash over every field that shapes the snapshot contents."""
        keys = ("ranges", "refine_levels", "harmonics", "nonlinear_iron",
                "n_gauss", "n_train", "n_test", "n_validation", "sobol_skip")
        d = asdict(self)
        payload = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    known = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return PipelineConfig(**raw)


def sample_parameters(config: PipelineConfig) -> list[ParamVector]:
    """One Sobol stream; splits are consecutive blocks of it."""
    rect = [config.ranges[k] for k in PARAM_ORDER]
    pts = sobol_sample(rect, config.n_total, skip=config.sobol_skip)
    return [ParamVector.from_array(p) for p in pts]


# ---------------------------------------------------------------------------
# full-order solves


def full_solve(config: PipelineConfig, P: ParamVector):
    """Build, refine, and solve the machine at one design point."""
    cfg = config.machine()
    model = refine(build_machine_geometry(P, cfg), config.refine_levels)
    maps = build_dofmaps(model)
    sol = solve_nonlinear(model, machine_materials(model, cfg), maps,
                          H=config.harmonics, n_gauss=config.n_gauss)
    return model, maps, sol


def _solve_worker(config_dict: dict, p_arr: list):
    """Process-pool entry point: returns (coefficients, diagnostics)."""
    config = PipelineConfig(**config_dict)
    P = ParamVector.from_array(np.asarray(p_arr))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, _, sol = full_solve(config, P)
    return sol.stacked(), {"iterations": sol.iterations,
                           "residual": sol.residual_norm}


# ---------------------------------------------------------------------------
# snapshot store


MANIFEST_NAME = "manifest.json"


class SnapshotStore:
    """Directory with a JSON manifest plus one raw float64 file per sample."""

    def __init__(self, directory, manifest: dict):
        self.directory = str(directory)
        self.manifest = manifest

    @staticmethod
    def open(directory) -> "SnapshotStore":
        path = os.path.join(str(directory), MANIFEST_NAME)
        if not os.path.exists(path):
            raise ConfigError(f"{directory}: no snapshot manifest found")
        with open(path) as fh:
            manifest = json.load(fh)
        store = SnapshotStore(directory, manifest)
        n_files = sum(1 for s in manifest["samples"] if s["status"] == "ok")
        present = sum(os.path.exists(store.sample_path(s["index"]))
                      for s in manifest["samples"] if s["status"] == "ok")
        if present != n_files:
            raise ConfigError(f"{directory}: manifest lists {n_files} snapshots, "
                              f"{present} files present")
        return store

    def check_hash(self, config: PipelineConfig) -> None:
        if self.manifest["config_hash"] != config.snapshot_hash():
            raise ConfigError("snapshot store was generated with an incompatible "
                              "configuration (hash mismatch)")

    def sample_path(self, index: int) -> str:
        return os.path.join(self.directory, f"sample_{index:04d}.bin")

    @property
    def n_dofs(self) -> int:
        return self.manifest["n_dofs_rotor"] + self.manifest["n_dofs_stator"]

    def sample_record(self, index: int) -> dict:
        return self.manifest["samples"][index]

    def params(self, index: int) -> ParamVector:
        return ParamVector.from_array(np.asarray(self.sample_record(index)["params"]))

    def load_sample(self, index: int) -> np.ndarray:
        rec = self.sample_record(index)
        if rec["status"] != "ok":
            raise ConfigError(f"sample {index} failed during generation: {rec['reason']}")
        u = np.fromfile(self.sample_path(index), dtype="<f8")
        if u.size != self.n_dofs:
            raise ConfigError(f"sample {index}: expected {self.n_dofs} values, got {u.size}")
        return u

    def ok_indices(self, split: range) -> list[int]:
        return [i for i in split
                if self.manifest["samples"][i]["status"] == "ok"]

    def load_matrix(self, indices) -> pod.SnapshotMatrix:
        cols = [self.load_sample(i) for i in indices]
        params = [self.params(i) for i in indices]
        return pod.SnapshotMatrix(np.column_stack(cols), params)


def generate_snapshots(config: PipelineConfig, out_dir, workers: int = 1,
                       progress=None) -> SnapshotStore:
    """Solve every sampled design; failures are recorded, not fatal, unless
    they exceed 10% of the run."""
    os.makedirs(out_dir, exist_ok=True)
    params = sample_parameters(config)
    results: dict[int, tuple] = {}

    def handle(i, outcome, error=None):
        results[i] = (outcome, error)
        if progress:
            progress(i, config.n_total, error is None)

    if workers > 1:
        cfg_dict = asdict(config)
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_solve_worker, cfg_dict, list(p.as_array())): i
                       for i, p in enumerate(params)}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    handle(i, fut.result())
                except IgafieldError as exc:
                    handle(i, None, str(exc))
    else:
        for i, p in enumerate(params):
            try:
                handle(i, _solve_worker(asdict(config), list(p.as_array())))
            except IgafieldError as exc:
                handle(i, None, str(exc))

    samples = []
    n_fail = 0
    n_rt = n_st = None
    for i, p in enumerate(params):
        outcome, error = results[i]
        rec = {"index": i, "params": [float(v) for v in p.as_array()]}
        if error is None:
            u, diag = outcome
            rec.update(status="ok", **diag)
            u.astype("<f8").tofile(os.path.join(out_dir, f"sample_{i:04d}.bin"))
        else:
            n_fail += 1
            rec.update(status="failed", reason=error)
        samples.append(rec)
    if n_fail > 0.1 * config.n_total:
        raise NumericalError(
            f"{n_fail}/{config.n_total} snapshot solves failed (limit is 10%)")
    # DoF counts come from one reference build; identical for every sample
    cfg = config.machine()
    model = refine(build_machine_geometry(ParamVector.midpoint(), cfg), config.refine_levels)
    maps = build_dofmaps(model)
    n_rt = maps.rotor.n_free
    n_st = maps.stator.n_free
    manifest = {
        "format": "igafield-snapshots",
        "version": 1,
        "config_hash": config.snapshot_hash(),
        "n_dofs_rotor": n_rt,
        "n_dofs_stator": n_st,
        "samples": samples,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return SnapshotStore(out_dir, manifest)


# ---------------------------------------------------------------------------
# reference weighting and air-gap restriction


def reference_weighting(config: PipelineConfig):
    """(model, maps, K0) with K0 the unit-material stiffness at the midpoint
    design P-bar; all samples share this DoF layout."""
    cfg = config.machine()
    model = refine(build_machine_geometry(ParamVector.midpoint(), cfg),
                   config.refine_levels)
    maps = build_dofmaps(model)
    return model, maps, assemble_K0(model, maps, config.n_gauss)


def airgap_dof_mask(model, maps: SubdomainMaps) -> np.ndarray:
    """Boolean mask over stacked free DoFs whose basis support touches the
    air-gap annulus (rotor outer air ring, stator inner air ring)."""
    mask = np.zeros(maps.rotor.n_free + maps.stator.n_free, dtype=bool)
    offset = {"rotor": 0, "stator": maps.rotor.n_free}
    for name, dmap in maps.blocks():
        for pi in dmap.patch_indices:
            patch = model.patches[pi]
            ring = patch.meta.get("ring")
            gap = (name == "rotor" and ring == 3) or (name == "stator" and ring == 0)
            if not gap:
                continue
            f = dmap.free[dmap.gidx[pi]]
            mask[offset[name] + f[f >= 0]] = True
    return mask


def solution_from_coefficients(model, maps: SubdomainMaps, u: np.ndarray) -> SaddleSolution:
    """Wrap a stacked coefficient vector so post-processing can evaluate it."""
    n_rt = maps.rotor.n_free
    return SaddleSolution(u_rt=u[:n_rt], u_st=u[n_rt:], lam=np.zeros(0),
                          residual_norm=0.0, iterations=0, model=model, maps=maps)


# ---------------------------------------------------------------------------
# POD / training / evaluation stages


def basis_content_hash(basis: pod.PodBasis) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(basis.Q, dtype="<f8").tobytes())
    return h.hexdigest()


def run_pod(store: SnapshotStore, config: PipelineConfig, out_dir):
    """Weighted POD of the training split; persists the basis and the
    eigenvalue table (CSV, descending)."""
    store.check_hash(config)
    os.makedirs(out_dir, exist_ok=True)
    idx = store.ok_indices(config.split_indices("train"))
    if len(idx) < 2:
        raise ConfigError("POD needs at least 2 successful training snapshots")
    S = store.load_matrix(idx)
    model, maps, K0 = reference_weighting(config)
    W = K0
    meta = {"config_hash": config.snapshot_hash(), "airgap_only": config.airgap_only}
    if config.airgap_only:
        mask = airgap_dof_mask(model, maps)
        S = pod.SnapshotMatrix(S.data[mask], S.params)
        W = K0[mask][:, mask].tocsr()
    basis = pod.weighted_pod(S, W, m=config.pod_modes,
                             energy_tol=config.pod_energy, metadata=meta)
    pod.save_basis(basis, os.path.join(out_dir, "basis.pod"))
    with open(os.path.join(out_dir, "eigenvalues.csv"), "w") as fh:
        fh.write("mode,eigenvalue,cumulative_energy\n")
        tot = float(np.sum(np.clip(basis.all_eigenvalues, 0.0, None)))
        c = 0.0
        for k, lam in enumerate(basis.all_eigenvalues, start=1):
            c += max(lam, 0.0) / tot
            fh.write(f"{k},{lam:.17g},{c:.17g}\n")
    return basis, W


def _reduced_targets(store, basis, W, config, split: str):
    idx = store.ok_indices(config.split_indices(split))
    X = np.array([store.params(i).as_array() for i in idx])
    mask = None
    if basis.metadata.get("airgap_only"):
        model, maps, _ = reference_weighting(config)
        mask = airgap_dof_mask(model, maps)
    Y = []
    for i in idx:
        u = store.load_sample(i)
        if mask is not None:
            u = u[mask]
        Y.append(pod.project(basis, W, u))
    return idx, X, np.array(Y)


def run_training(store: SnapshotStore, basis: pod.PodBasis, W, config: PipelineConfig,
                 out_dir):
    """Train the coefficient network; persists model + per-epoch history CSV."""
    store.check_hash(config)
    if basis.metadata.get("config_hash") not in (None, config.snapshot_hash()):
        raise ConfigError("basis belongs to a different snapshot configuration")
    os.makedirs(out_dir, exist_ok=True)
    _, Xtr, Ytr = _reduced_targets(store, basis, W, config, "train")
    _, Xte, Yte = _reduced_targets(store, basis, W, config, "test")
    model, history = mlp.train(Xtr, Ytr, Xte, Yte, config.hidden_layers,
                               config.train_config(),
                               basis_hash=basis_content_hash(basis))
    mlp.save_model(model, os.path.join(out_dir, "model.mlp"))
    with open(os.path.join(out_dir, "history.csv"), "w") as fh:
        fh.write("epoch,train_loss,test_loss\n")
        for e, tl, vl in zip(history.epochs, history.train_loss, history.test_loss):
            fh.write(f"{e},{tl:.17g},{vl:.17g}\n")
    return model, history


@dataclass
class EvalReport:
    """Accuracy summary; deliberately free of timing so seeded runs are
    bit-identical (timing is the bench stage's job)."""

    splits: dict            # name -> {n, mean, max, std, pod_mean}
    torque: dict            # {n, mean_rel_error, max_rel_error, radius_m}
    m: int
    n_dofs: int
    pod_oversized: bool
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


def run_evaluation(store: SnapshotStore, basis: pod.PodBasis, W, model: mlp.MlpModel,
                   config: PipelineConfig, out_dir,
                   torque_split: str = "validation") -> EvalReport:
    """Field errors per split in the reference semi-norm (per-sample stiffness
    optional) plus full-order-vs-surrogate torque on one split."""
    store.check_hash(config)
    if model.basis_hash and model.basis_hash != basis_content_hash(basis):
        raise ConfigError("network was trained against a different basis (hash mismatch)")
    os.makedirs(out_dir, exist_ok=True)
    airgap = bool(basis.metadata.get("airgap_only"))
    ref_model, ref_maps, _ = reference_weighting(config)
    mask = airgap_dof_mask(ref_model, ref_maps) if airgap else None

    rows = []
    splits_out = {}
    for split in ("train", "test", "validation"):
        idx = store.ok_indices(config.split_indices(split))
        errs, pod_errs = [], []
        for i in idx:
            u = store.load_sample(i)
            if mask is not None:
                u = u[mask]
            Wi = W
            if config.eval_sample_stiffness and not airgap:
                mdl_i = refine(build_machine_geometry(store.params(i), config.machine()),
                               config.refine_levels)
                maps_i = build_dofmaps(mdl_i)
                Wi = assemble_K0(mdl_i, maps_i, config.n_gauss)
            ubar = mlp.forward(model, store.params(i).as_array())
            utilde = pod.reconstruct(basis, ubar)
            e = seminorm_error(u, utilde, Wi)
            ep = seminorm_error(u, pod.reconstruct(basis, pod.project(basis, W, u)), Wi)
            errs.append(e)
            pod_errs.append(ep)
            rows.append((split, i, e, ep))
        errs = np.array(errs)
        splits_out[split] = {
            "n": len(idx),
            "mean": float(errs.mean()),
            "max": float(errs.max()),
            "std": float(errs.std()),
            "pod_mean": float(np.mean(pod_errs)),
        }

    # torque comparison on the requested split
    tq_idx = store.ok_indices(config.split_indices(torque_split))
    tq_errs, radius = [], None
    for i in tq_idx:
        P = store.params(i)
        mdl = refine(build_machine_geometry(P, config.machine()), config.refine_levels)
        maps = build_dofmaps(mdl)
        u_full = store.load_sample(i)
        ubar = mlp.forward(model, P.as_array())
        u_sur = reconstruct_full(basis, ubar, mask)
        t_full = torque(mdl, solution_from_coefficients(mdl, maps, u_full),
                        n_quadrature=config.torque_quadrature)
        t_sur = torque(mdl, solution_from_coefficients(mdl, maps, u_sur),
                       n_quadrature=config.torque_quadrature)
        radius = t_full.radius
        denom = abs(t_full.torque)
        if denom > 0:
            tq_errs.append(abs(t_sur.torque - t_full.torque) / denom)
    report = EvalReport(
        splits=splits_out,
        torque={
            "n": len(tq_errs),
            "mean_rel_error": float(np.mean(tq_errs)) if tq_errs else float("nan"),
            "max_rel_error": float(np.max(tq_errs)) if tq_errs else float("nan"),
            "radius_m": radius,
        },
        m=basis.m,
        n_dofs=basis.n,
        pod_oversized=splits_out["validation"]["pod_mean"]
        >= splits_out["validation"]["mean"],
        config_hash=config.snapshot_hash(),
    )
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out_dir, "errors.csv"), "w") as fh:
        fh.write("split,sample,field_error,pod_error\n")
        for split, i, e, ep in rows:
            fh.write(f"{split},{i},{e:.17g},{ep:.17g}\n")
    return report


def reconstruct_full(basis: pod.PodBasis, ubar: np.ndarray,
                     mask: np.ndarray | None) -> np.ndarray:
    """Lift reduced coefficients to the stacked DoF vector; DoFs outside an
    air-gap-restricted basis are zero (their basis functions do not touch
    the quantities post-processed from the gap)."""
    u = pod.reconstruct(basis, ubar)
    if mask is None:
        return u
    out = np.zeros(mask.size)
    out[mask] = u
    return out


def predict(model: mlp.MlpModel, basis: pod.PodBasis, P: ParamVector,
            config: PipelineConfig | None = None):
    """Surrogate coefficients for one design point; warns outside the ranges."""
    if model.basis_hash and model.basis_hash != basis_content_hash(basis):
        raise ConfigError("network and basis are incompatible (hash mismatch)")
    violations = P.range_violations()
    if violations:
        warnings.warn("extrapolating outside the sampled design ranges: "
                      + "; ".join(violations))
    ubar = mlp.forward(model, P.as_array())
    mask = None
    if basis.metadata.get("airgap_only"):
        if config is None:
            raise ConfigError("air-gap-restricted basis needs the pipeline config "
                              "to rebuild the DoF mask")
        ref_model, ref_maps, _ = reference_weighting(config)
        mask = airgap_dof_mask(ref_model, ref_maps)
    return ubar, reconstruct_full(basis, ubar, mask)


# ---------------------------------------------------------------------------
# timing


def bench(config: PipelineConfig, model: mlp.MlpModel, basis: pod.PodBasis,
          P: ParamVector | None = None) -> dict:
    """Median full-solve time vs median surrogate prediction time."""
    P = P or ParamVector.midpoint()
    solve_times = []
    for _ in range(config.bench_solves):
        t0 = time.perf_counter()
        full_solve(config, P)
        solve_times.append(time.perf_counter() - t0)
    x = P.as_array()
    predict_times = []
    for _ in range(config.bench_predictions):
        t0 = time.perf_counter()
        ubar = mlp.forward(model, x)
        pod.reconstruct(basis, ubar)
        predict_times.append(time.perf_counter() - t0)
    solve_med = statistics.median(solve_times)
    pred_med = statistics.median(predict_times)
    return {
        "full_solve_s": solve_med,
        "surrogate_predict_s": pred_med,
        "speedup": solve_med / pred_med,
        "n_solves": config.bench_solves,
        "n_predictions": config.bench_predictions,
    }
