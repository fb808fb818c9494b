"""Bilinear sampling, disparity-driven backward warping, plane sweeps and blending.

Sign convention: a target pixel ``x`` at angular position ``q`` is fetched
from source ``p`` at ``x + (q - p) * D_q(x)``, with the angular offset
``(du, dv)`` acting on ``(y, x)``.  Coordinates falling outside the frame are
clamped to the border before interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AngularCoord


@dataclass(frozen=True, eq=False)
class DisparityMap:
    target: AngularCoord
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"disparity map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("disparity map contains non-finite values")
        object.__setattr__(self, "target", AngularCoord(*self.target))
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class ConfidenceMaps:
    """K per-pixel blending weights forming a convex combination."""

    target: AngularCoord
    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3:
            raise ValueError(f"confidence maps must be (K, H, W), got shape {maps.shape}")
        if np.any(maps < -1e-12) or np.any(maps > 1 + 1e-12):
            raise ValueError("confidence values must lie in [0, 1]")
        if not np.allclose(maps.sum(axis=0), 1.0, atol=1e-6):
            raise ValueError("confidence maps must sum to 1 at every pixel")
        object.__setattr__(self, "target", AngularCoord(*self.target))
        object.__setattr__(self, "maps", maps)


@dataclass(frozen=True, eq=False)
class PlaneSweepVolume:
    """Input views warped to ``target`` at constant disparities.

    ``slabs`` has shape ``(K, L, H, W)`` (plus a trailing channel axis for
    color inputs).
    """

    target: AngularCoord
    planes: np.ndarray
    slabs: np.ndarray

    @property
    def num_inputs(self) -> int:
        return self.slabs.shape[0]

    @property
    def num_planes(self) -> int:
        return self.slabs.shape[1]


@dataclass
class BilinearTaps:
    """Clamped integer neighbours and fractional weights for a set of sample points."""

    flat00: np.ndarray
    flat01: np.ndarray
    flat10: np.ndarray
    flat11: np.ndarray
    wy: np.ndarray
    wx: np.ndarray
    # False where the coordinate was clamped (zero derivative there)
    free_y: np.ndarray
    free_x: np.ndarray


def bilinear_taps(ys: np.ndarray, xs: np.ndarray, height: int, width: int,
                  base: np.ndarray | int = 0) -> BilinearTaps:
    """Compute gather indices into a flattened image stack.

    ``base`` is the flat offset of the image each sample reads from, so a
    stack of images can be sampled with one gather.
    """
    ys = np.asarray(ys)
    xs = np.asarray(xs)
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(xs))):
        raise ValueError("non-finite sample coordinates")
    yc = np.clip(ys, 0.0, height - 1)
    xc = np.clip(xs, 0.0, width - 1)
    y0 = np.floor(yc)
    x0 = np.floor(xc)
    wy = yc - y0
    wx = xc - x0
    y0 = y0.astype(np.intp)
    x0 = x0.astype(np.intp)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    r0 = base + y0 * width
    r1 = base + y1 * width
    return BilinearTaps(r0 + x0, r0 + x1, r1 + x0, r1 + x1, wy, wx,
                        (ys >= 0) & (ys <= height - 1), (xs >= 0) & (xs <= width - 1))


def gather(flat: np.ndarray, taps: BilinearTaps, with_grad: bool = False):
    """Interpolate ``flat`` at the tap positions.

    With ``with_grad`` also returns the partial derivatives of the
    interpolant with respect to the sample coordinates ``(d/dy, d/dx)``.
    """
    a = flat[taps.flat00]
    b = flat[taps.flat01]
    c = flat[taps.flat10]
    d = flat[taps.flat11]
    wy, wx = taps.wy, taps.wx
    top = a + wx * (b - a)
    bottom = c + wx * (d - c)
    out = top + wy * (bottom - top)
    if not with_grad:
        return out
    dy = (bottom - top) * taps.free_y
    dx = ((1 - wy) * (b - a) + wy * (d - c)) * taps.free_x
    return out, dy, dx


def scatter_taps(grad_out: np.ndarray, taps: BilinearTaps, size: int) -> np.ndarray:
    """Adjoint of :func:`gather` with respect to the sampled image values."""
    wy, wx = taps.wy, taps.wx
    g = grad_out
    acc = np.bincount(taps.flat00.ravel(), (g * (1 - wy) * (1 - wx)).ravel(), minlength=size)
    acc += np.bincount(taps.flat01.ravel(), (g * (1 - wy) * wx).ravel(), minlength=size)
    acc += np.bincount(taps.flat10.ravel(), (g * wy * (1 - wx)).ravel(), minlength=size)
    acc += np.bincount(taps.flat11.ravel(), (g * wy * wx).ravel(), minlength=size)
    return acc


def bilinear_sample(img: np.ndarray, x, y):
    """Sample a 2-D image at real coordinates ``(x, y)`` with border clamping.

    Scalars give a scalar back; arrays of coordinates are sampled elementwise.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("bilinear_sample expects a non-empty 2-D image")
    taps = bilinear_taps(np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64), *img.shape)
    out = gather(img.ravel(), taps)
    return float(out) if np.ndim(out) == 0 else out


def _offset(src_pos, tgt_pos) -> tuple[int, int]:
    p = AngularCoord(*src_pos)
    q = AngularCoord(*tgt_pos)
    return q.u - p.u, q.v - p.v


def _sample_image(src: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = src.shape[:2]
    taps = bilinear_taps(ys, xs, h, w)
    if src.ndim == 2:
        return gather(src.ravel(), taps)
    return np.stack([gather(src[..., c].ravel(), taps) for c in range(src.shape[2])], axis=-1)


def backward_warp(src: np.ndarray, src_pos, tgt_pos, disp) -> np.ndarray:
    """Warp the view at ``src_pos`` to ``tgt_pos`` using the target disparity.

    ``src`` is ``(H, W)`` or ``(H, W, C)``; ``disp`` is a :class:`DisparityMap`
    or an ``(H, W)`` array expressed at the target.
    """
    src = np.asarray(src, dtype=np.float64)
    values = disp.values if isinstance(disp, DisparityMap) else np.asarray(disp, dtype=np.float64)
    if values.shape != src.shape[:2]:
        raise ValueError(f"disparity shape {values.shape} does not match image {src.shape[:2]}")
    du, dv = _offset(src_pos, tgt_pos)
    if du == 0 and dv == 0:
        return src.copy()
    h, w = values.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _sample_image(src, yy + du * values, xx + dv * values)


def build_psv(sparse: np.ndarray, pattern: Sequence, target, planes) -> PlaneSweepVolume:
    """Plane-sweep volume of ``sparse`` (K views) at ``target``."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 1 or planes.size == 0:
        raise ValueError("need at least one disparity plane")
    if planes.size > 1 and np.any(np.diff(planes) <= 0):
        raise ValueError("disparity planes must be strictly increasing")
    target = AngularCoord(*target)
    coords = [AngularCoord(*p) for p in pattern]
    if target in coords:
        raise ValueError(f"target {target} coincides with an input position")
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.shape[0] != len(coords):
        raise ValueError(f"{sparse.shape[0]} views but {len(coords)} pattern positions")
    h, w = sparse.shape[1:3]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    slabs = np.empty((len(coords), planes.size) + sparse.shape[1:])
    for k, p in enumerate(coords):
        du, dv = _offset(p, target)
        for l, d in enumerate(planes):
            slabs[k, l] = _sample_image(sparse[k], yy + d * du, xx + d * dv)
    return PlaneSweepVolume(target, planes, slabs)


def blend_confidence(warped: np.ndarray, conf) -> np.ndarray:
    """Per-pixel weighted sum of K warped images.

    ``warped`` is ``(K, H, W)`` or ``(K, H, W, C)``; ``conf`` is a
    :class:`ConfidenceMaps` or a ``(K, H, W)`` array.
    """
    warped = np.asarray(warped, dtype=np.float64)
    maps = conf.maps if isinstance(conf, ConfidenceMaps) else np.asarray(conf, dtype=np.float64)
    if warped.ndim < 3 or warped.shape[0] < 1:
        raise ValueError("need at least one warped image")
    if maps.shape[0] != warped.shape[0]:
        raise ValueError(f"{warped.shape[0]} images but {maps.shape[0]} confidence maps")
    if maps.shape[1:] != warped.shape[1:3]:
        raise ValueError(f"confidence shape {maps.shape[1:]} does not match images {warped.shape[1:3]}")
    if warped.ndim == 4:
        maps = maps[..., None]
    return np.sum(maps * warped, axis=0)
