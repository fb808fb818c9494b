"""Report figures rendered to image files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import AngularGrid, Epi, SamplingPattern  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the files byte-stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curve(trace, path, smooth: int = 50) -> Path:
    """Training loss (raw and moving average) with the learning rate on a twin axis."""
    trace = np.asarray(trace, dtype=np.float64).reshape(-1, 3)
    it, loss, lr = trace.T
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(it, loss, lw=0.6, alpha=0.4, label="loss")
    if len(loss) >= smooth > 1:
        avg = np.convolve(loss, np.ones(smooth) / smooth, mode="valid")
        ax.plot(it[smooth - 1:], avg, lw=1.5, label=f"{smooth}-step mean")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(it, lr, color="gray", ls="--", lw=1)
    ax2.set_ylabel("learning rate")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def plot_view_psnr(report, grid: AngularGrid, pattern: SamplingPattern, path) -> Path:
    """Heatmap of per-view PSNR on the angular grid; input views are marked."""
    values = np.full((grid.rows, grid.cols), np.nan)
    for row in report.views:
        values[row["u"] - 1, row["v"] - 1] = row["psnr"]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(values, cmap="viridis", extent=(0.5, grid.cols + 0.5, grid.rows + 0.5, 0.5))
    fig.colorbar(im, ax=ax, label="PSNR (dB)")
    for c in pattern:
        ax.plot(c.v, c.u, "s", mfc="none", mec="red", ms=14, mew=2)
    ax.set_xlabel("v")
    ax.set_ylabel("u")
    ax.set_title(f"mean {report.mean_psnr:.2f} dB")
    fig.tight_layout()
    return _save(fig, path)


def plot_epi(epis, path, titles=None) -> Path:
    """One or more epipolar-plane images side by side (e.g. ground truth vs reconstruction)."""
    if isinstance(epis, Epi):
        epis = [epis]
    fig, axes = plt.subplots(len(epis), 1, figsize=(6, 1.2 + 0.9 * len(epis)), squeeze=False)
    for i, epi in enumerate(epis):
        ax = axes[i, 0]
        ax.imshow(epi.image, cmap="gray", vmin=0, vmax=1, aspect="auto", interpolation="nearest")
        ax.set_ylabel(epi.axes[0])
        if titles:
            ax.set_title(titles[i], fontsize=9)
    axes[-1, 0].set_xlabel(epis[-1].axes[1])
    fig.tight_layout()
    return _save(fig, path)


def plot_pattern(pattern: SamplingPattern, grid: AngularGrid, path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(3.5, 3.5))
    cells = grid.coords_array()
    ax.plot(cells[:, 1], cells[:, 0], "o", color="lightgray", ms=10)
    p = pattern.as_array()
    ax.plot(p[:, 1], p[:, 0], "o", color="tab:red", ms=12)
    ax.set_xlim(0.5, grid.cols + 0.5)
    ax.set_ylim(grid.rows + 0.5, 0.5)
    ax.set_xticks(range(1, grid.cols + 1))
    ax.set_yticks(range(1, grid.rows + 1))
    ax.set_xlabel("v")
    ax.set_ylabel("u")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
