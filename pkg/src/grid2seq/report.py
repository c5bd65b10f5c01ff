"""Figures written next to the tab-separated logs and reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_metric_log(path):
    """Columns of a ``step train_loss dev_ppl dev_fer lr`` log as a dict of arrays."""
    names = ("step", "train_loss", "dev_ppl", "dev_fer", "lr")
    rows = [line.split("\t") for line in open(path) if line.strip()]
    cols = np.array(rows, dtype=float).reshape(-1, len(names))
    return {n: cols[:, k] for k, n in enumerate(names)}


def plot_learning_curves(metric_log, out_png):
    m = read_metric_log(metric_log)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(m["step"], m["train_loss"], marker=".")
    axes[0].set_ylabel("train loss (smoothed CE)")
    axes[1].plot(m["step"], m["dev_ppl"], marker=".", color="C1")
    axes[1].set_yscale("log")
    axes[1].set_ylabel("dev perplexity")
    ax = axes[2]
    ax.plot(m["step"], 100 * m["dev_fer"], marker=".", color="C2")
    ax.set_ylabel("dev FER [%]")
    lr_ax = ax.twinx()
    lr_ax.plot(m["step"], m["lr"], color="0.5", lw=1, ls="--")
    lr_ax.set_ylabel("learning rate")
    for a in axes:
        a.set_xlabel("step")
        a.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_cell_counts(per_sample, beam_size, out_png, full_per_sample=None):
    """Cell evaluations per sample against decoded rows, with both closed forms."""
    rows = np.array([r for _, r, _, _ in per_sample], dtype=float)
    tp = np.array([t for _, _, t, _ in per_sample], dtype=float)
    cells = np.array([c for _, _, _, c in per_sample], dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.scatter(rows, cells / tp, s=12, label="row-wise (measured)")
    if full_per_sample is not None:
        full = np.array([c for _, _, _, c in full_per_sample], dtype=float)
        ax.scatter(rows, full / tp, s=12, marker="x", label="full recompute (measured)")
    r = np.arange(1, rows.max() + 1 if rows.size else 2)
    ax.plot(r, beam_size * r, color="C0", lw=1, label="B R")
    ax.plot(r, beam_size * r * (r + 1) / 2, color="C1", lw=1, label="B R(R+1)/2")
    ax.set_xlabel("decoded rows R")
    ax.set_ylabel("cell evaluations / T'")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
