"""Figure renderers. Each returns (fig, payload) so tests can check the
plotted numbers without decoding images; save() writes the file only after
the figure fully renders, so a failure never leaves a partial image."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .frames import MetricsFrame, load_distance_matrix, load_quality_table, load_sweep

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def save(fig, out_path):
    ext = os.path.splitext(out_path)[1].lstrip(".").lower() or "png"
    fig.savefig(out_path, format=ext, dpi=120, bbox_inches="tight",
                metadata={"Software": None} if ext == "png" else None)
    plt.close(fig)
    return out_path


def plot_learning_curves(series, out_path=None, protocol="natural", column="win_rate"):
    """series: dict label -> list of metrics.csv paths (one per seed).

    Draws the cross-seed mean with a shaded 95% CI band per label; a single
    seed collapses the band onto the line.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    payload = {}
    for i, (label, paths) in enumerate(series.items()):
        frame = MetricsFrame.load(paths)
        gens, mean, ci = frame.curve(protocol, column)
        color = _COLORS[i % len(_COLORS)]
        ax.plot(gens, mean, label=label, color=color)
        ax.fill_between(gens, mean - ci, mean + ci, alpha=0.2, color=color)
        payload[label] = {"generation": gens, "mean": mean, "ci95": ci}
    ax.set_xlabel("generation")
    ax.set_ylabel(column.replace("_", " "))
    ax.set_title(f"{protocol} evaluation")
    if column == "win_rate":
        ax.set_ylim(-0.02, 1.02)
    ax.legend()
    if out_path:
        save(fig, out_path)
    return fig, payload


def plot_distance_heatmap(distance_csv, out_path=None):
    """Pairwise behavior-distance heatmap; the color scale tops out at the
    matrix maximum (or 1 for an all-zero matrix)."""
    mat = load_distance_matrix(distance_csv)
    vmax = float(mat.max()) if mat.max() > 0 else 1.0
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(mat, cmap="viridis", vmin=0.0, vmax=vmax)
    fig.colorbar(im, ax=ax, label="behavior distance")
    ax.set_xlabel("archive entry")
    ax.set_ylabel("archive entry")
    ax.set_title("attacker behavior distances")
    if out_path:
        save(fig, out_path)
    return fig, {"matrix": mat, "clim": im.get_clim()}


def plot_quality_bars(quality_csv, out_path=None):
    """Mean attacker quality per method with 95% CI whiskers."""
    table = load_quality_table(quality_csv)
    labels = list(table)
    means = [float(np.mean(table[k])) for k in labels]
    cis = [
        0.0
        if len(table[k]) < 2
        else 1.96 * float(np.std(table[k], ddof=1)) / math.sqrt(len(table[k]))
        for k in labels
    ]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(labels, means, yerr=cis, capsize=4,
           color=[_COLORS[i % len(_COLORS)] for i in range(len(labels))])
    ax.set_ylabel("attacker quality (discounted return)")
    ax.set_title("attacker quality by method")
    if out_path:
        save(fig, out_path)
    return fig, {"labels": labels, "means": means, "ci95": cis}


def plot_budget_sweep(sweeps, out_path=None):
    """sweeps: dict label -> sweep.csv path; win rate vs attack budget."""
    fig, ax = plt.subplots(figsize=(6, 4))
    payload = {}
    for i, (label, path) in enumerate(sweeps.items()):
        budgets, wins, cis = load_sweep(path)
        color = _COLORS[i % len(_COLORS)]
        ax.errorbar(budgets, wins, yerr=cis, label=label, color=color,
                    marker="o", capsize=3)
        payload[label] = {"budget": budgets, "win_rate": wins, "ci95": cis}
    ax.set_xlabel("test attack budget")
    ax.set_ylabel("win rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("budget generalization")
    ax.legend()
    if out_path:
        save(fig, out_path)
    return fig, payload
