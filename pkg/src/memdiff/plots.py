"""SVG plot and PGM image writers for experiment artifacts."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def scatter_svg(points, path, labels=None, title="", lim=2.5):
    """2-D scatter of sample endpoints, optionally colored by class."""
    points = np.atleast_2d(points)
    fig, ax = plt.subplots(figsize=(5, 5))
    if labels is None:
        ax.scatter(points[:, 0], points[:, 1], s=6, alpha=0.5)
    else:
        labels = np.asarray(labels)
        for cls in np.unique(labels):
            sel = labels == cls
            ax.scatter(points[sel, 0], points[sel, 1], s=6, alpha=0.5,
                       label=str(cls))
        ax.legend()
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, format="svg")
    plt.close(fig)


def heatmap_svg(values, x_labels, y_labels, path, title="",
                xlabel="read sigma (mS)", ylabel="write sigma (mS)"):
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(x_labels)),
                  [f"{v:.3g}" for v in x_labels], rotation=45)
    ax.set_yticks(range(len(y_labels)), [f"{v:.3g}" for v in y_labels])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="KL (nats)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def trajectories_svg(trajs, path, title=""):
    """Lab-time waveforms, one panel per state dimension."""
    n = trajs[0].states.shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), sharex=True)
    axes = np.atleast_1d(axes)
    for traj in trajs:
        for d in range(n):
            axes[d].plot(traj.times, traj.states[:, d], lw=0.8, alpha=0.7)
    for d in range(n):
        axes[d].set_ylabel(f"x{d + 1}")
    axes[-1].set_xlabel("lab time (s)")
    axes[0].set_title(title)
    fig.savefig(path, format="svg")
    plt.close(fig)


def save_pgm(image, path):
    """Write a [-1, 1] grayscale image as binary PGM (P5)."""
    img = np.asarray(image, float)
    pixels = np.clip((img + 1.0) * 127.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(pixels.tobytes())


def load_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        w, h = map(int, f.readline().split())
        maxval = int(f.readline())
        pixels = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return pixels.reshape(h, w) / (maxval / 2.0) - 1.0
