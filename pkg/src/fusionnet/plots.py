"""Static figure export: FP heatmaps, width/height scatter, PR curves, loss curves."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import APResult, FPAnalysis  # noqa: E402

_COLORS = {"TP": "tab:green", "FP": "tab:red", "FN": "tab:blue"}


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name) or "fov"


def plot_fp_heatmaps(analysis: FPAnalysis, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fov, grid in sorted(analysis.heatmaps.items()):
        fig, ax = plt.subplots(figsize=(6, 6 * grid.shape[0] / max(grid.shape[1], 1) + 0.5))
        im = ax.imshow(grid, cmap="inferno", interpolation="nearest")
        ax.set_title(f"false positives, {fov} ({analysis.cell} px cells)")
        ax.set_xlabel("x cell")
        ax.set_ylabel("y cell")
        fig.colorbar(im, ax=ax, shrink=0.8)
        p = out_dir / f"fp_heatmap_{_safe(fov)}.png"
        fig.savefig(p, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    return paths


def plot_dimension_scatter(analysis: FPAnalysis, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    for kind in ("TP", "FP", "FN"):
        d = analysis.scatter.get(kind)
        if d is not None and len(d):
            ax.scatter(d[:, 0], d[:, 1], s=8, alpha=0.6, c=_COLORS[kind], label=f"{kind} (n={len(d)})")
    ax.set_xlabel("box width [px]")
    ax.set_ylabel("box height [px]")
    if ax.get_legend_handles_labels()[1]:
        ax.legend(loc="upper left")
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_pr_curves(curves: Mapping[str, APResult], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, r in curves.items():
        if len(r.recall):
            ax.step(r.recall, r.precision, where="post", label=f"{name} AP={r.ap:.3f}")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if ax.get_legend_handles_labels()[1]:
        ax.legend(loc="lower left")
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_loss_curve(history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    for k in ("total", "box", "cls", "dfl"):
        ax.plot(epochs, [h[k] for h in history], marker="o", label=k)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return Path(path)
