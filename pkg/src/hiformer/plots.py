"""Figure rendering for the CLI report paths (always next to the CSV output)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ioutil import atomic_path


def save_mode_figure(original, imf, path, title=None):
    """Stacked panels: the source series on top, each mode below, residual last."""
    m = imf.modes.shape[0]
    fig, axes = plt.subplots(m + 2, 1, figsize=(8, 1.4 * (m + 2)), sharex=True)
    axes[0].plot(original, lw=0.8, color="black")
    axes[0].set_ylabel("input")
    for i in range(m):
        axes[i + 1].plot(imf.modes[i], lw=0.8)
        axes[i + 1].set_ylabel(f"mode {i + 1}\n{imf.center_freqs[i]:.3f}")
    axes[-1].plot(imf.residual, lw=0.8, color="gray")
    axes[-1].set_ylabel("residual")
    axes[-1].set_xlabel("step")
    if title:
        axes[0].set_title(title)
    fig.align_ylabels(axes)
    fig.tight_layout()
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)


def save_forecast_figure(times, y_true, y_pred, path, title=None):
    """Farm-mean truth vs forecast over the evaluation timeline."""
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(times, y_true, lw=1.0, color="black", label="observed")
    ax.plot(times, y_pred, lw=1.0, color="tab:red", alpha=0.85, label="forecast")
    ax.set_ylabel("normalized power (farm mean)")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    fig.autofmt_xdate()
    fig.tight_layout()
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)


def save_history_figure(history, path):
    """Training and validation loss curves per epoch."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(epochs, [row["train_loss"] for row in history], label="train")
    ax.plot(epochs, [row["val_loss"] for row in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if min(row["train_loss"] for row in history) > 0:
        ax.set_yscale("log")
    ax.legend(frameon=False)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    fig.tight_layout()
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)


def save_embedding_figure(vectors, ids, path):
    """2-component projection scatter of the node vectors."""
    arr = np.asarray(vectors)
    centered = arr - arr.mean(axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(centered.T, full_matrices=False)
    proj = centered.T @ vt[:2].T
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.scatter(proj[:, 0], proj[:, 1], s=18, color="tab:blue")
    for i, label in enumerate(ids):
        ax.annotate(str(label), proj[i], fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    fig.tight_layout()
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=120)
    plt.close(fig)
