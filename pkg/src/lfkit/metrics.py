"""PSNR / SSIM and per-view evaluation of reconstructed light fields."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .core import LUMA_WEIGHTS, LightField, SamplingPattern, complement_pattern

PSNR_CAP = 100.0


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA_WEIGHTS
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    return img


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over the valid region of an 11x11 Gaussian window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    win = gaussian_window(window, sigma)
    filt = lambda z: convolve2d(z, win, mode="valid")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    va = filt(a * a) - mu_a ** 2
    vb = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    views: list  # dicts with u, v, psnr, ssim
    mean_psnr: float
    mean_ssim: float

    @property
    def count(self) -> int:
        return len(self.views)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim,
                "views": self.views}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["u", "v", "psnr", "ssim"])
        for row in self.views:
            writer.writerow([row["u"], row["v"], f"{row['psnr']:.6f}", f"{row['ssim']:.6f}"])
        writer.writerow(["mean", "", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])
        return buf.getvalue()


def evaluate(recon: LightField, gt: LightField, pattern: SamplingPattern) -> EvalReport:
    """PSNR/SSIM on each novel view (views in ``pattern`` are skipped).

    Color views are scored on luma; infinite PSNR is capped at 100 dB.
    """
    if recon.grid != gt.grid:
        raise ValueError(f"grid mismatch: reconstruction {recon.grid}, ground truth {gt.grid}")
    if (recon.height, recon.width) != (gt.height, gt.width):
        raise ValueError(f"spatial size mismatch: {recon.height}x{recon.width} vs {gt.height}x{gt.width}")
    rows = []
    for q in complement_pattern(gt.grid, pattern):
        a, b = _gray(recon.view(q)), _gray(gt.view(q))
        rows.append({"u": q.u, "v": q.v, "psnr": min(psnr(a, b), PSNR_CAP), "ssim": ssim(a, b)})
    if not rows:
        return EvalReport([], PSNR_CAP, 1.0)
    return EvalReport(rows, float(np.mean([r["psnr"] for r in rows])),
                      float(np.mean([r["ssim"] for r in rows])))


def nearest_copy_baseline(sparse: np.ndarray, pattern: SamplingPattern, grid) -> LightField:
    """Fill every novel view with the nearest input view (ties: first in pattern order)."""
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.ndim == 3:
        sparse = sparse[..., None]
    coords = pattern.as_array()
    data = np.empty((grid.rows, grid.cols) + sparse.shape[1:])
    for c in grid:
        d2 = ((coords - np.array(c)) ** 2).sum(axis=1)
        data[c.u - 1, c.v - 1] = sparse[int(np.argmin(d2))]
    return LightField(data)
