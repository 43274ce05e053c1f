"""Command-line interface.

Stages write their delimited artifacts plus rendered figures into
subdirectories of ``--out-dir``; later stages find earlier artifacts there.
Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import mlp, pipeline, plots, pod
from .errors import ConfigError, NumericalError
from .geometry import export_geometry, refine, validate_geometry
from .machine import ParamVector, build_machine_geometry, machine_materials
from .magnetostatics import build_dofmaps, solve_nonlinear
from .pipeline import PipelineConfig, SnapshotStore, load_config
from .postprocess import export_field, torque


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for
    numerical failures, so usage problems become ConfigError -> exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline configuration JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out-dir", default="runs", help="artifact directory")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel solves for snapshot generation")


def _param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mag", type=float, help="magnet depth below the rotor surface [mm]")
    parser.add_argument("--mh", type=float, help="magnet height [mm]")
    parser.add_argument("--mw", type=float, help="magnet width [mm]")
    parser.add_argument("--alpha", type=float, help="rotor angle [deg]")


def build_parser() -> _Parser:
    parser = _Parser(prog="igafield",
                     description="isogeometric machine solver with a POD "
                                 "neural surrogate")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        return p

    p = add("geometry", "build, validate, and export the sector geometry")
    _param_flags(p)
    p = add("sample", "emit the sampled design parameters")
    add("snapshot", "run all full-order solves")
    add("pod", "compute the weighted POD basis of the training snapshots")
    add("train", "train the coefficient network")
    add("eval", "evaluate the surrogate against the stored snapshots")
    p = add("predict", "surrogate prediction at one design point")
    _param_flags(p)
    p.add_argument("--field", action="store_true",
                   help="also reconstruct and export the field map")
    p.add_argument("--torque", action="store_true",
                   help="also compute the surrogate torque")
    add("bench", "time full solves against surrogate predictions")
    return parser


def _load(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _params_from_flags(args, config) -> ParamVector:
    base = ParamVector.midpoint()
    vals = {
        "mag": args.mag * 1e-3 if args.mag is not None else base.mag,
        "mh": args.mh * 1e-3 if args.mh is not None else base.mh,
        "mw": args.mw * 1e-3 if args.mw is not None else base.mw,
        "alpha_deg": args.alpha if args.alpha is not None else base.alpha_deg,
    }
    return ParamVector(**vals)


def _subdir(args, name: str) -> str:
    path = os.path.join(args.out_dir, name)
    os.makedirs(path, exist_ok=True)
    return path


def _open_artifacts(args, config):
    store = SnapshotStore.open(os.path.join(args.out_dir, "snapshots"))
    basis = pod.load_basis(os.path.join(args.out_dir, "pod", "basis.pod"))
    _, _, K0 = pipeline.reference_weighting(config)
    W = K0
    if basis.metadata.get("airgap_only"):
        model, maps, _ = pipeline.reference_weighting(config)
        mask = pipeline.airgap_dof_mask(model, maps)
        W = K0[mask][:, mask].tocsr()
    return store, basis, W


def cmd_geometry(args, config) -> int:
    P = _params_from_flags(args, config)
    model = refine(build_machine_geometry(P, config.machine()), config.refine_levels)
    report = validate_geometry(model)
    out = _subdir(args, "geometry")
    export_geometry(model, os.path.join(out, "geometry.json"))
    plots.plot_geometry(model, os.path.join(out, "geometry.png"))
    for issue in report.issues:
        print(f"issue: {issue}", file=sys.stderr)
    if not report:
        raise NumericalError(f"geometry validation failed with {len(report.issues)} issue(s)")
    print(f"geometry ok: {len(model.patches)} patches -> {out}")
    return 0


def cmd_sample(args, config) -> int:
    params = pipeline.sample_parameters(config)
    out = _subdir(args, "sample")
    path = os.path.join(out, "parameters.csv")
    with open(path, "w") as fh:
        fh.write("index,split,mag[m],mh[m],mw[m],alpha[deg]\n")
        for i, p in enumerate(params):
            split = ("train" if i < config.n_train
                     else "test" if i < config.n_train + config.n_test
                     else "validation")
            fh.write(f"{i},{split}," + ",".join(f"{v:.17g}" for v in p.as_array()) + "\n")
    print(f"{len(params)} samples -> {path}")
    return 0


def cmd_snapshot(args, config) -> int:
    out = os.path.join(args.out_dir, "snapshots")

    def progress(i, n, ok):
        print(f"[{i + 1:4d}/{n}] {'ok' if ok else 'FAILED'}", file=sys.stderr)

    store = pipeline.generate_snapshots(config, out, workers=args.workers,
                                        progress=progress)
    n_ok = sum(1 for s in store.manifest["samples"] if s["status"] == "ok")
    print(f"{n_ok}/{config.n_total} snapshots ({store.n_dofs} DoFs) -> {out}")
    return 0


def cmd_pod(args, config) -> int:
    store = SnapshotStore.open(os.path.join(args.out_dir, "snapshots"))
    out = _subdir(args, "pod")
    basis, _ = pipeline.run_pod(store, config, out)
    plots.plot_eigenvalue_decay(basis.all_eigenvalues,
                                os.path.join(out, "eigenvalue_decay.png"), m=basis.m)
    print(f"m = {basis.m} modes, energy captured {basis.energy_captured:.6f} -> {out}")
    return 0


def cmd_train(args, config) -> int:
    store, basis, W = _open_artifacts(args, config)
    out = _subdir(args, "train")
    _, history = pipeline.run_training(store, basis, W, config, out)
    plots.plot_training_history(history.epochs, history.train_loss, history.test_loss,
                                os.path.join(out, "training_history.png"))
    print(f"trained {history.epochs[-1]} epochs, final loss "
          f"{history.train_loss[-1]:.3e} -> {out}")
    return 0


def cmd_eval(args, config) -> int:
    store, basis, W = _open_artifacts(args, config)
    model = mlp.load_model(os.path.join(args.out_dir, "train", "model.mlp"))
    out = _subdir(args, "eval")
    report = pipeline.run_evaluation(store, basis, W, model, config, out)
    rows = []
    with open(os.path.join(out, "errors.csv")) as fh:
        next(fh)
        for line in fh:
            split, i, e, ep = line.strip().split(",")
            rows.append((split, int(i), float(e), float(ep)))
    plots.plot_error_histogram(rows, os.path.join(out, "error_histogram.png"))
    for split, stats in report.splits.items():
        print(f"{split:10s} mean {stats['mean'] * 100:6.2f} %  "
              f"max {stats['max'] * 100:6.2f} %  pod {stats['pod_mean'] * 100:6.2f} %")
    print(f"torque mean error {report.torque['mean_rel_error'] * 100:.2f} % -> {out}")
    return 0


def cmd_predict(args, config) -> int:
    store, basis, W = _open_artifacts(args, config)
    net = mlp.load_model(os.path.join(args.out_dir, "train", "model.mlp"))
    P = _params_from_flags(args, config)
    ubar, u_full = pipeline.predict(net, basis, P, config)
    out = _subdir(args, "predict")
    with open(os.path.join(out, "coefficients.csv"), "w") as fh:
        fh.write("mode,coefficient\n")
        for k, c in enumerate(ubar, start=1):
            fh.write(f"{k},{c:.17g}\n")
    if args.field or args.torque:
        cfg = config.machine()
        model = refine(build_machine_geometry(P, cfg), config.refine_levels)
        maps = build_dofmaps(model)
        sol = pipeline.solution_from_coefficients(model, maps, u_full)
        if args.field:
            data = export_field(model, sol, 8, os.path.join(out, "field.csv"))
            plots.plot_field(data, os.path.join(out, "field.png"))
        if args.torque:
            t = torque(model, sol, n_quadrature=config.torque_quadrature)
            print(f"torque {t.torque:.6g} N*m at r = {t.radius * 1e3:.2f} mm")
    print(f"prediction ({basis.m} coefficients) -> {out}")
    return 0


def cmd_bench(args, config) -> int:
    _, basis, _ = _open_artifacts(args, config)
    net = mlp.load_model(os.path.join(args.out_dir, "train", "model.mlp"))
    result = pipeline.bench(config, net, basis)
    out = _subdir(args, "bench")
    with open(os.path.join(out, "bench.json"), "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"full solve {result['full_solve_s'] * 1e3:.1f} ms | surrogate "
          f"{result['surrogate_predict_s'] * 1e6:.1f} us | "
          f"speed-up {result['speedup']:.0f}x")
    return 0


_COMMANDS = {
    "geometry": cmd_geometry,
    "sample": cmd_sample,
    "snapshot": cmd_snapshot,
    "pod": cmd_pod,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load(args)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
