"""Differentiable layers used by the reconstruction network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry
from .tensor import Tensor, as_tensor, make, reshape, transpose

ACTIVATIONS = ("identity", "relu", "leaky_relu", "smooth_leaky_relu", "softplus", "tanh")


def _conv_nhwc(xp: np.ndarray, w: np.ndarray, h: int, wd: int) -> np.ndarray:
    """Accumulate one matmul per kernel tap.  ``xp`` is padded NHWC, ``w`` is (kh, kw, Cin, Cout)."""
    kh, kw = w.shape[:2]
    out = np.zeros(xp.shape[:1] + (h, wd, w.shape[3]), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation with zero "same" padding.

    ``x`` is ``(B, Cin, H, W)``, ``weight`` is ``(Cout, Cin, kh, kw)`` with odd
    kernel extents, ``bias`` is ``(Cout,)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    b, _, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    wk = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))
    out = _conv_nhwc(xp, wk, h, w)
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gn = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gx = gw = None
        if x.requires_grad:
            gp = np.pad(gn, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
            flipped = np.ascontiguousarray(wk[::-1, ::-1].transpose(0, 1, 3, 2))
            gx = _conv_nhwc(gp, flipped, h, w).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            g2 = gn.reshape(-1, cout)
            gw = np.empty((kh, kw, cin, cout), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gw[i, j] = xp[:, i:i + h, j:j + w, :].reshape(-1, cin).T @ g2
            gw = gw.transpose(3, 2, 0, 1)
        grads = (gx, gw)
        if bias is not None:
            grads += (g2.sum(axis=0) if weight.requires_grad else gn.sum(axis=(0, 1, 2)),)
        return grads

    return make(out.transpose(0, 3, 1, 2), parents, backward)


def activation(x: Tensor, kind: str = "identity", alpha: float = 0.1) -> Tensor:
    """Elementwise nonlinearity.

    ``relu`` uses the subgradient 0 at 0.  ``smooth_leaky_relu`` is
    ``alpha*x + (1-alpha)*softplus(x)``, a differentiable stand-in for
    ``leaky_relu`` used when checking gradients.
    """
    x = as_tensor(x)
    d = x.data
    if kind == "identity":
        return x
    if kind == "relu":
        mask = d > 0
        return make(d * mask, (x,), lambda g: (g * mask,))
    if kind == "leaky_relu":
        slope = np.where(d > 0, 1.0, alpha).astype(d.dtype)
        return make(d * slope, (x,), lambda g: (g * slope,))
    if kind == "softplus":
        sig = 0.5 * (1 + np.tanh(0.5 * d))
        return make(np.logaddexp(0, d).astype(d.dtype), (x,), lambda g: (g * sig,))
    if kind == "smooth_leaky_relu":
        sig = 0.5 * (1 + np.tanh(0.5 * d))
        out = alpha * d + (1 - alpha) * np.logaddexp(0, d)
        return make(out.astype(d.dtype), (x,), lambda g: (g * (alpha + (1 - alpha) * sig),))
    if kind == "tanh":
        t = np.tanh(d)
        return make(t, (x,), lambda g: (g * (1 - t * t),))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def scaled_tanh(x: Tensor, lo: float, hi: float) -> Tensor:
    """Map to the open interval ``(lo, hi)`` smoothly."""
    x = as_tensor(x)
    t = np.tanh(x.data)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return make(mid + half * t, (x,), lambda g: (g * half * (1 - t * t),))


def channel_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over axis 1 of a ``(B, K, H, W)`` tensor.

    ``mask`` (broadcastable to ``x``, truthy = present) zeroes absent channels
    and excludes them from the normalization.
    """
    x = as_tensor(x)
    d = x.data
    if mask is None:
        z = d - d.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not np.all(mask.any(axis=1)):
            raise ValueError("every pixel needs at least one present channel")
        z = np.where(mask, d, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, z, 0)), 0)
    s = (e / e.sum(axis=1, keepdims=True)).astype(d.dtype)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return make(s, (x,), backward)


@dataclass
class FeatureStack:
    """Light-field features in spatial ``(MN, f, H, W)`` or angular ``(HW, f, M, N)`` layout."""

    tensor: Tensor
    layout: str
    grid: tuple[int, int]
    spatial: tuple[int, int]

    def __post_init__(self):
        m, n = self.grid
        h, w = self.spatial
        if self.layout == "spatial":
            expected = (m * n, h, w)
        elif self.layout == "angular":
            expected = (h * w, m, n)
        else:
            raise ValueError(f"unknown layout {self.layout!r}")
        s = self.tensor.shape
        if len(s) != 4 or (s[0], s[2], s[3]) != expected:
            raise ValueError(f"{self.layout} stack with grid {self.grid} and size {self.spatial} "
                             f"cannot have shape {s}")

    @property
    def channels(self) -> int:
        return self.tensor.shape[1]


def relayout(f: FeatureStack) -> FeatureStack:
    """Swap between the spatial and angular layouts; a pure permutation."""
    m, n = f.grid
    h, w = f.spatial
    c = f.channels
    t = f.tensor
    if f.layout == "spatial":
        t = reshape(transpose(reshape(t, (m, n, c, h, w)), (3, 4, 2, 0, 1)), (h * w, c, m, n))
        return FeatureStack(t, "angular", f.grid, f.spatial)
    t = reshape(transpose(reshape(t, (h, w, c, m, n)), (3, 4, 2, 0, 1)), (m * n, c, h, w))
    return FeatureStack(t, "spatial", f.grid, f.spatial)


def warp(src: Tensor, disp: Tensor, offsets: np.ndarray) -> Tensor:
    """Backward-warp stacks of source views with per-batch disparity maps.

    ``src`` is ``(B, K, H, W)``, ``disp`` is ``(B, 1, H, W)`` and ``offsets``
    is ``(B, K, 2)`` holding ``q - p`` as ``(du, dv)``.  Output pixel
    ``(b, k, y, x)`` samples ``src[b, k]`` at
    ``(y + du * D, x + dv * D)`` bilinearly with border clamping.
    """
    src, disp = as_tensor(src), as_tensor(disp)
    b, k, h, w = src.shape
    if disp.shape != (b, 1, h, w):
        raise ValueError(f"disparity shape {disp.shape} does not match sources {src.shape}")
    offsets = np.asarray(offsets, dtype=src.data.dtype).reshape(b, k, 1, 1, 2)
    yy = np.arange(h, dtype=src.data.dtype)[:, None]
    xx = np.arange(w, dtype=src.data.dtype)[None, :]
    dd = disp.data
    ys = yy + offsets[..., 0] * dd
    xs = xx + offsets[..., 1] * dd
    base = (np.arange(b * k) * (h * w)).reshape(b, k, 1, 1)
    taps = geometry.bilinear_taps(ys, xs, h, w, base)
    flat = src.data.reshape(-1)
    need_d = disp.requires_grad
    if need_d:
        out, gy, gx = geometry.gather(flat, taps, with_grad=True)
    else:
        out = geometry.gather(flat, taps)
    out = out.astype(src.data.dtype)

    def backward(g):
        gs = gd = None
        if src.requires_grad:
            gs = geometry.scatter_taps(g, taps, flat.size).reshape(src.shape).astype(g.dtype)
        if need_d:
            gd = np.sum(g * (offsets[..., 0] * gy + offsets[..., 1] * gx), axis=1, keepdims=True)
        return gs, gd

    return make(out, (src, disp), backward)
