"""Figures written next to the CSV reports (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed point-class palette: reference, predicted, then spares
PALETTE = ("#00ff00", "#ff00ff", "#00ffff", "#ffff00", "#ff0000", "#0000ff", "#ffffff", "#ff8000")
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def overlay(image, ref_points, pred_points=None, path=None, title: str = ""):
    """Reference (and predicted) landmarks drawn over one frame."""
    h, w = np.shape(image)
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.imshow(image, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    ref = np.asarray(ref_points)
    ax.scatter(ref[:, 0], ref[:, 1], s=6, c=PALETTE[0], label="reference", linewidths=0)
    if pred_points is not None:
        pred = np.asarray(pred_points)
        ax.scatter(pred[:, 0], pred[:, 1], s=6, c=PALETTE[1], label="predicted", linewidths=0)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)
    ax.legend(loc="lower right", fontsize=6, markerscale=2, framealpha=0.5)
    fig.tight_layout()
    if path is None:
        return fig
    return _save(fig, path)


def loss_history(history, path):
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    for key, color in zip(("total", "pos", "jacobian", "latent"), PALETTE[2:]):
        vals = [float(r[key]) for r in history]
        if any(v > 0 for v in vals):
            ax.semilogy(epochs, vals, label=key, color=color if key != "total" else "k")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def ablation(rows, path):
    """Point error and strain bias against the Jacobian weight."""
    alphas = np.array([float(r["alpha"]) for r in rows])
    x = np.arange(len(alphas))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3), dpi=100)
    a1.plot(x, [float(r["point_error"]) for r in rows], "o-k")
    a1.set_ylabel("point error (mm)")
    a2.plot(x, [float(r["gcs_bias"]) for r in rows], "o-", label="GCS bias")
    a2.plot(x, [float(r["grs_bias"]) for r in rows], "s-", label="GRS bias")
    a2.axhline(0, color="0.6", lw=0.8)
    a2.set_ylabel("bias (%)")
    a2.legend(fontsize=7)
    for ax in (a1, a2):
        ax.set_xticks(x)
        ax.set_xticklabels([f"{a:g}" for a in alphas])
        ax.set_xlabel("alpha")
    fig.tight_layout()
    return _save(fig, path)


def strain_agreement(pred, ref, path, label: str = "strain (%)"):
    pred, ref = 100 * np.asarray(pred), 100 * np.asarray(ref)
    fig, ax = plt.subplots(figsize=(3.5, 3.5), dpi=100)
    ax.scatter(ref, pred, s=10, c="k")
    lo = min(pred.min(), ref.min())
    hi = max(pred.max(), ref.max())
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=0.8)
    ax.set_xlabel(f"reference {label}")
    ax.set_ylabel(f"predicted {label}")
    fig.tight_layout()
    return _save(fig, path)
