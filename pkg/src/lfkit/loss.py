"""Training objective: intermediate and final l1 terms plus second-order disparity smoothness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor


@dataclass(frozen=True)
class LossWeights:
    coarse: float = 1.0
    smooth: float = 0.001
    refined: float = 1.0

    def __post_init__(self):
        for name in ("coarse", "smooth", "refined"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name}={value} must be finite and nonnegative")

    def scaled(self, s: float) -> "LossWeights":
        return LossWeights(self.coarse * s, self.smooth * s, self.refined * s)


def _check_shapes(a, b):
    sa = a.shape if hasattr(a, "shape") else np.shape(a)
    sb = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ValueError(f"shape mismatch {tuple(sa)} vs {tuple(sb)}")


def _data(x):
    if isinstance(x, Tensor):
        return x
    return getattr(x, "data", x)


def l1_loss(a, b):
    """Unnormalized sum of absolute differences.

    Tensors in give a Tensor out; arrays (or light fields) in give a float.
    """
    a, b = _data(a), _data(b)
    _check_shapes(a, b)
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return nn.tabs(nn.as_tensor(a) - b).sum()
    return float(np.sum(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def _second_differences(d):
    """The four second differences of a stack ``(..., H, W)`` on interior sites."""
    dxx = d[..., 1:-1, 2:] - 2 * d[..., 1:-1, 1:-1] + d[..., 1:-1, :-2]
    dyy = d[..., 2:, 1:-1] - 2 * d[..., 1:-1, 1:-1] + d[..., :-2, 1:-1]
    # mixed terms as successive forward differences, both orders
    dx = d[..., :, 1:] - d[..., :, :-1]
    dxy = dx[..., 1:, :] - dx[..., :-1, :]
    dy = d[..., 1:, :] - d[..., :-1, :]
    dyx = dy[..., :, 1:] - dy[..., :, :-1]
    return dxx, dxy, dyx, dyy


def second_order_smoothness(maps):
    """Sum over maps of the l1 norms of the xx, xy, yx and yy second differences.

    ``maps`` is a list of :class:`~lfkit.geometry.DisparityMap` / 2-D arrays,
    or a Tensor stack ``(T, ..., H, W)``.
    """
    if isinstance(maps, Tensor):
        if maps.shape[-1] < 3 or maps.shape[-2] < 3:
            raise ValueError("disparity maps must be at least 3x3")
        dxx, dxy, dyx, dyy = _second_differences(maps)
        return nn.tabs(dxx).sum() + nn.tabs(dxy).sum() + nn.tabs(dyx).sum() + nn.tabs(dyy).sum()
    arrays = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps]
    if not arrays:
        raise ValueError("need at least one disparity map")
    total = 0.0
    for d in arrays:
        if d.shape[0] < 3 or d.shape[1] < 3:
            raise ValueError(f"disparity map of shape {d.shape} is smaller than 3x3")
        total += sum(float(np.abs(t).sum()) for t in _second_differences(d))
    return total


def objective(gt, coarse, refined, disparity, w: LossWeights = LossWeights(), normalize: bool = False):
    """Weighted objective over synthesized views.

    ``gt``, ``coarse`` and ``refined`` hold the synthesized views only (same
    shape); ``disparity`` is the ``(T, ..., H, W)`` stack of their disparity
    maps.  With ``normalize`` each term is divided by its element count.
    Works on Tensors (differentiable) or plain arrays.
    """
    _check_shapes(gt, coarse)
    _check_shapes(gt, refined)
    ls = l1_loss(gt, coarse)
    lr = l1_loss(gt, refined)
    if isinstance(disparity, Tensor):
        lsm = second_order_smoothness(disparity)
    else:
        disparity = np.asarray(disparity, dtype=np.float64)
        lsm = second_order_smoothness(list(disparity.reshape((-1,) + disparity.shape[-2:])))
    if normalize:
        n = float(np.prod(np.shape(_data(gt))))
        h, w_ = disparity.shape[-2:]
        nd = float(np.prod(disparity.shape[:-2])) * (h - 2) * (w_ - 2)
        ls, lr, lsm = ls * (1.0 / n), lr * (1.0 / n), lsm * (1.0 / nd)
    return w.coarse * ls + w.smooth * lsm + w.refined * lr


def total_loss(gt, coarse, refined, w: LossWeights = LossWeights(), normalize: bool = False) -> float:
    """Objective of a finished reconstruction.

    ``gt`` and ``refined`` are light fields; ``coarse`` is a
    :class:`~lfkit.model.CoarseOutput`.  Only synthesized views (the keys of
    ``coarse.disparities``) contribute.
    """
    targets = list(coarse.disparities)
    if not targets:
        return 0.0
    pick = lambda lf: np.stack([lf.view(q) for q in targets])
    disp = np.stack([coarse.disparities[q].values for q in targets])
    return float(objective(pick(gt), pick(coarse.intermediate), pick(refined), disp, w, normalize))
