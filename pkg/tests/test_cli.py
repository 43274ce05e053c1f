"""Command-line interface tests: full stage walkthrough and exit codes."""

import json
import os

import pytest

from igafield.cli import main


TINY = {
    "refine_levels": 0,
    "harmonics": 2,
    "n_train": 6,
    "n_test": 2,
    "n_validation": 2,
    "pod_modes": 3,
    "hidden_layers": [8],
    "epochs": 60,
    "learning_rate": 5e-3,
    "patience": 1000,
    "test_interval": 20,
    "torque_quadrature": 16,
    "bench_solves": 1,
    "bench_predictions": 5,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY))
    return root, str(config), str(root / "runs")


def run(args):
    return main(args)


def test_stage_walkthrough(workspace, capsys):
    root, config, out = workspace
    common = ["--config", config, "--out-dir", out]

    assert run(["geometry", *common]) == 0
    assert os.path.exists(os.path.join(out, "geometry", "geometry.json"))
    assert os.path.exists(os.path.join(out, "geometry", "geometry.png"))

    assert run(["sample", *common]) == 0
    rows = open(os.path.join(out, "sample", "parameters.csv")).read().splitlines()
    assert rows[0].startswith("index,split,")
    assert len(rows) - 1 == 10
    assert rows[1].split(",")[1] == "train"
    assert rows[-1].split(",")[1] == "validation"

    assert run(["snapshot", *common]) == 0
    assert os.path.exists(os.path.join(out, "snapshots", "manifest.json"))

    assert run(["pod", *common]) == 0
    assert os.path.exists(os.path.join(out, "pod", "basis.pod"))
    assert os.path.exists(os.path.join(out, "pod", "eigenvalues.csv"))
    assert os.path.exists(os.path.join(out, "pod", "eigenvalue_decay.png"))

    assert run(["train", *common]) == 0
    assert os.path.exists(os.path.join(out, "train", "model.mlp"))
    assert os.path.exists(os.path.join(out, "train", "training_history.png"))

    assert run(["eval", *common]) == 0
    report = json.loads(open(os.path.join(out, "eval", "report.json")).read())
    assert set(report["splits"]) == {"train", "test", "validation"}
    assert os.path.exists(os.path.join(out, "eval", "error_histogram.png"))
    # the report carries no wall-clock data; timing belongs to bench
    assert not any("time" in k or "duration" in k for k in report)

    assert run(["predict", *common, "--mag", "8", "--mh", "4", "--mw", "15",
                "--alpha", "10", "--field", "--torque"]) == 0
    coeffs = open(os.path.join(out, "predict", "coefficients.csv")).read().splitlines()
    assert len(coeffs) - 1 == TINY["pod_modes"]
    assert os.path.exists(os.path.join(out, "predict", "field.csv"))
    assert os.path.exists(os.path.join(out, "predict", "field.png"))
    captured = capsys.readouterr()
    assert "torque" in captured.out

    assert run(["bench", *common]) == 0
    bench = json.loads(open(os.path.join(out, "bench", "bench.json")).read())
    assert bench["n_solves"] == 1 and bench["n_predictions"] == 5
    assert bench["speedup"] > 1


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run([]) == 1                                    # missing subcommand
    assert run(["frobnicate"]) == 1                        # unknown subcommand
    assert run(["sample", "--no-such-flag"]) == 1          # unknown flag
    assert run(["sample", "--config", str(tmp_path / "nope.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"pod_modes": 3, "pod_energy": 0.9}')
    assert run(["sample", "--config", str(bad)]) == 1
    capsys.readouterr()


def test_missing_artifacts_exit_one(workspace, tmp_path, capsys):
    _, config, _ = workspace
    # pod before snapshot: no manifest in the fresh out-dir
    assert run(["pod", "--config", config, "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_infeasible_geometry_exits_two(workspace, capsys):
    _, config, out = workspace
    code = run(["geometry", "--config", config, "--out-dir", out,
                "--mag", "15", "--mh", "12", "--mw", "10"])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_seed_override_changes_training(workspace, tmp_path):
    """--seed feeds through to the pipeline configuration."""
    _, config, out = workspace
    out2 = str(tmp_path / "runs2")
    os.makedirs(out2)
    os.symlink(os.path.join(out, "snapshots"), os.path.join(out2, "snapshots"))
    os.symlink(os.path.join(out, "pod"), os.path.join(out2, "pod"))
    assert run(["train", "--config", config, "--out-dir", out2, "--seed", "1"]) == 0
    a = open(os.path.join(out, "train", "model.mlp"), "rb").read()
    b = open(os.path.join(out2, "train", "model.mlp"), "rb").read()
    assert a != b
