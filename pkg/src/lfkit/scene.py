"""Layered fronto-parallel synthetic scenes with exact ground truth.

Every layer carries a band-limited procedural texture (a short sum of
sinusoids) and an opacity shape, both defined in the coordinates of a
canonical view at the grid centre.  The view at angular position ``q`` sees
the layer point at canonical position ``x + (q - c) * d``, which is exactly
the relation the backward warp inverts, so ground-truth disparity warps are
photo-consistent up to interpolation error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import AngularCoord, AngularGrid, LightField
from .geometry import DisparityMap


@dataclass
class Layer:
    disparity: float
    shape: str = "full"  # full | disc | rect
    center: tuple[float, float] = (0.0, 0.0)  # (y, x) in canonical pixels
    size: tuple[float, float] = (0.0, 0.0)  # disc: (radius, _); rect: half extents (hy, hx)

    def covers(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.shape == "full":
            return np.ones(np.broadcast(y, x).shape, dtype=bool)
        cy, cx = self.center
        if self.shape == "disc":
            return (y - cy) ** 2 + (x - cx) ** 2 <= self.size[0] ** 2
        if self.shape == "rect":
            return (np.abs(y - cy) <= self.size[0]) & (np.abs(x - cx) <= self.size[1])
        raise ValueError(f"unknown layer shape {self.shape!r}")


@dataclass
class SceneSpec:
    layers: list[Layer]
    grid: AngularGrid = field(default_factory=lambda: AngularGrid(5, 5))
    width: int = 64
    height: int = 64
    disparity_range: tuple[float, float] = (-4.0, 4.0)
    channels: int = 1
    sinusoids: int = 8
    # angular frequency band of the textures in radians per pixel
    frequency_band: tuple[float, float] = (0.05, 0.6)
    contrast: float = 0.45

    def __post_init__(self):
        if not self.layers:
            raise ValueError("scene needs at least one layer")
        lo, hi = self.disparity_range
        for layer in self.layers:
            if not lo <= layer.disparity <= hi:
                raise ValueError(f"layer disparity {layer.disparity} outside range [{lo}, {hi}]")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 1 <= self.sinusoids <= 8:
            raise ValueError("textures use between 1 and 8 sinusoids")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        layers = [Layer(**{**layer, "center": tuple(layer.get("center", (0, 0))),
                           "size": tuple(layer.get("size", (0, 0)))}) for layer in d.pop("layers")]
        grid = d.pop("grid", "5x5")
        grid = AngularGrid.parse(grid) if isinstance(grid, str) else AngularGrid(*grid)
        for key in ("disparity_range", "frequency_band"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(layers=layers, grid=grid, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = str(self.grid)
        return d

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


def _texture(rng: np.random.Generator, n: int, band, contrast):
    freq = rng.uniform(band[0], band[1], size=n)
    angle = rng.uniform(0, 2 * np.pi, size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    amp = rng.uniform(0.5, 1.0, size=n)
    amp *= contrast / amp.sum()
    wy, wx = freq * np.sin(angle), freq * np.cos(angle)

    def sample(y, x):
        out = np.full(np.broadcast(y, x).shape, 0.5)
        for i in range(n):
            out += amp[i] * np.sin(wy[i] * y + wx[i] * x + phase[i])
        return out

    return sample


class SyntheticScene:
    """Rendered light field, per-view disparity, and on-demand occlusion masks."""

    def __init__(self, spec: SceneSpec, rng: np.random.Generator):
        self.spec = spec
        self.textures = [[_texture(rng, spec.sinusoids, spec.frequency_band, spec.contrast)
                          for _ in range(spec.channels)] for _ in spec.layers]
        # back to front
        self.order = sorted(range(len(spec.layers)), key=lambda i: spec.layers[i].disparity)
        grid = spec.grid
        self.center = ((grid.rows + 1) / 2.0, (grid.cols + 1) / 2.0)
        yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
        self._yy, self._xx = yy, xx
        data = np.empty((grid.rows, grid.cols, spec.height, spec.width, spec.channels))
        disp = np.empty((grid.rows, grid.cols, spec.height, spec.width))
        front = np.empty((grid.rows, grid.cols, spec.height, spec.width), dtype=np.intp)
        for q in grid:
            img, d, f = self._render(q)
            data[q.u - 1, q.v - 1] = img
            disp[q.u - 1, q.v - 1] = d
            front[q.u - 1, q.v - 1] = f
        self.lightfield = LightField(np.clip(data, 0.0, 1.0), spec.disparity_range)
        self.disparity = disp
        self.front_layer = front
        self._masks: dict = {}

    def _canonical(self, q, d, y, x):
        du = q[0] - self.center[0]
        dv = q[1] - self.center[1]
        return y + du * d, x + dv * d

    def _render(self, q):
        spec = self.spec
        img = np.zeros((spec.height, spec.width, spec.channels))
        disp = np.zeros((spec.height, spec.width))
        front = np.full((spec.height, spec.width), -1, dtype=np.intp)
        for i in self.order:
            layer = spec.layers[i]
            cy, cx = self._canonical(q, layer.disparity, self._yy, self._xx)
            m = layer.covers(cy, cx)
            for c in range(spec.channels):
                img[..., c] = np.where(m, self.textures[i][c](cy, cx), img[..., c])
            disp = np.where(m, layer.disparity, disp)
            front = np.where(m, i, front)
        return img, disp, front

    def disparity_map(self, q) -> DisparityMap:
        q = AngularCoord(*q)
        return DisparityMap(q, self.disparity[q.u - 1, q.v - 1])

    def occlusion_mask(self, q, p) -> np.ndarray:
        """Pixels of view ``q`` not visible from view ``p`` (occluded or out of frame)."""
        q, p = AngularCoord(*q), AngularCoord(*p)
        key = (q, p)
        if key in self._masks:
            return self._masks[key]
        spec = self.spec
        h, w = spec.height, spec.width
        front = self.front_layer[q.u - 1, q.v - 1]
        d = self.disparity[q.u - 1, q.v - 1]
        sy = self._yy + (q.u - p.u) * d
        sx = self._xx + (q.v - p.v) * d
        mask = (sy < 0) | (sy > h - 1) | (sx < 0) | (sx > w - 1) | (front < 0)
        for i, layer in enumerate(spec.layers):
            cy, cx = self._canonical(p, layer.disparity, sy, sx)
            mask |= (layer.disparity > d) & layer.covers(cy, cx)
        self._masks[key] = mask
        return mask


def make_synthetic_scene(spec: SceneSpec, rng: np.random.Generator | int = 0) -> SyntheticScene:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return SyntheticScene(spec, rng)


def random_plane_scene(rng: np.random.Generator, grid=AngularGrid(5, 5), size=64,
                       max_disparity=2.0, **kwargs) -> SyntheticScene:
    """Single textured fronto-parallel plane at a random disparity."""
    d = float(rng.uniform(-max_disparity, max_disparity))
    spec = SceneSpec([Layer(d)], grid, size, size, (-max_disparity, max_disparity), **kwargs)
    return make_synthetic_scene(spec, rng)


def occlusion_mask(gt_disp: DisparityMap, source) -> np.ndarray:
    """Estimate which target pixels are invisible from ``source``.

    Each target pixel is forward-projected into the source view with its own
    disparity and splatted to the nearest pixel of a z-buffer keeping the
    largest disparity.  A pixel is masked if its projection leaves the frame
    or lands on a pixel claimed by a larger disparity.
    """
    d = np.asarray(gt_disp.values, dtype=np.float64)
    q = gt_disp.target
    p = AngularCoord(*source)
    du, dv = q.u - p.u, q.v - p.v
    h, w = d.shape
    if du == 0 and dv == 0:
        return np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sy = yy + du * d
    sx = xx + dv * d
    outside = (sy < 0) | (sy > h - 1) | (sx < 0) | (sx > w - 1)
    iy = np.clip(np.rint(sy), 0, h - 1).astype(np.intp)
    ix = np.clip(np.rint(sx), 0, w - 1).astype(np.intp)
    flat = iy * w + ix
    zbuf = np.full(h * w, -np.inf)
    valid = ~outside
    np.maximum.at(zbuf, flat[valid], d[valid])
    covered = zbuf[flat] > d + 1e-6
    return outside | covered
