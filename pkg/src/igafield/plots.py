"""Matplotlib figure rendering for pipeline artifacts.

Every CLI stage that writes delimited output also drops a PNG next to it;
all figures use the Agg backend so the CLI never needs a display.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_eigenvalue_decay(eigenvalues, path, m: int | None = None) -> None:
    """Semi-log decay of the snapshot Gram eigenvalues."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    fig, ax = plt.subplots(figsize=(6, 4))
    k = np.arange(1, len(lam) + 1)
    pos = lam > 0
    ax.semilogy(k[pos], lam[pos] / lam[0], "o-", ms=3)
    if m is not None:
        ax.axvline(m, color="tab:red", ls="--", lw=1, label=f"retained m = {m}")
        ax.legend()
    ax.set_xlabel("mode index")
    ax.set_ylabel(r"$\lambda_k / \lambda_1$")
    ax.set_title("Snapshot eigenvalue decay")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_error_decay(mode_counts, errors, path, label="POD reconstruction") -> None:
    """Mean relative error versus retained mode count."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(mode_counts, errors, "s-", ms=4, label=label)
    ax.set_xlabel("modes m")
    ax.set_ylabel("mean relative error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_training_history(epochs, train_loss, test_loss, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(epochs, train_loss, lw=1, label="train")
    te = np.asarray(test_loss, dtype=float)
    mask = np.isfinite(te)
    if mask.any():
        ax.semilogy(np.asarray(epochs)[mask], te[mask], "o", ms=3, label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative squared loss")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_geometry(model, path, resolution: int = 12) -> None:
    """Patch outlines colored by material, with the air-gap circle."""
    colors = {"iron": "tab:gray", "magnet": "tab:red", "air": "tab:cyan",
              "coil": "tab:orange"}
    fig, ax = plt.subplots(figsize=(6, 6))
    ts = np.linspace(0.0, 1.0, resolution)
    seen = set()
    for patch in model.patches:
        loops = []
        for edge in (("u", 0.0), ("v", 1.0), ("u", 1.0), ("v", 0.0)):
            direction, fixed = edge
            pts = []
            for t in ts:
                xi = (t, fixed) if direction == "v" else (fixed, t)
                pts.append(patch.evaluate(xi, 0))
            loops.append(np.array(pts))
        boundary = np.vstack([loops[0], loops[1], loops[2][::-1], loops[3][::-1]])
        c = colors.get(patch.material_tag, "tab:green")
        label = patch.material_tag if patch.material_tag not in seen else None
        seen.add(patch.material_tag)
        ax.fill(boundary[:, 0] * 1e3, boundary[:, 1] * 1e3, color=c, alpha=0.5,
                lw=0.5, ec="k", label=label)
    r_ag = model.meta.get("r_airgap")
    if r_ag:
        th = np.linspace(0.0, math.pi, 100)
        ax.plot(r_ag * np.cos(th) * 1e3, r_ag * np.sin(th) * 1e3, "k--", lw=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def plot_field(samples, path, quantity: str = "bmag") -> None:
    """Scatter field map from `sample_field` output (columns x, y, A_z, B)."""
    col, label = {"az": (2, r"$A_z$ [Wb/m]"),
                  "bmag": (5, r"$|B|$ [T]")}[quantity]
    fig, ax = plt.subplots(figsize=(6, 6))
    sc = ax.scatter(samples[:, 0] * 1e3, samples[:, 1] * 1e3, c=samples[:, col],
                    s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label=label)
    ax.set_aspect("equal")
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    _save(fig, path)


def plot_error_histogram(report_rows, path) -> None:
    """Histogram of per-sample field errors, grouped by split.

    ``report_rows``: iterable of (split, index, field_error, pod_error).
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    by_split: dict[str, list] = {}
    for split, _, err, _ in report_rows:
        by_split.setdefault(split, []).append(err * 100.0)
    for split, errs in by_split.items():
        ax.hist(errs, bins=20, alpha=0.5, label=split)
    ax.set_xlabel("relative field error [%]")
    ax.set_ylabel("samples")
    ax.legend()
    _save(fig, path)
