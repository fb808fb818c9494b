"""Light-field data model and angular bookkeeping.

A light field is stored as a 5-D array indexed ``(u, v, y, x, c)`` with the
angular grid on the first two axes.  Angular coordinates exposed to users are
1-based ``(u, v)`` pairs; arrays are indexed 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class AngularCoord(NamedTuple):
    """1-based angular position; ``u`` indexes rows, ``v`` columns."""

    u: int
    v: int

    @property
    def index(self) -> tuple[int, int]:
        return self.u - 1, self.v - 1

    def __str__(self) -> str:
        return f"{self.u},{self.v}"


@dataclass(frozen=True)
class AngularGrid:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def __contains__(self, coord) -> bool:
        u, v = coord
        return 1 <= u <= self.rows and 1 <= v <= self.cols

    def __iter__(self) -> Iterator[AngularCoord]:
        for u in range(1, self.rows + 1):
            for v in range(1, self.cols + 1):
                yield AngularCoord(u, v)

    def coords_array(self) -> np.ndarray:
        """All grid positions as an ``(M*N, 2)`` integer array, row-major."""
        return np.array(list(self), dtype=np.int64)

    @classmethod
    def parse(cls, text: str) -> "AngularGrid":
        """Parse ``"7x7"``."""
        try:
            m, n = text.lower().split("x")
            return cls(int(m), int(n))
        except ValueError:
            raise ValueError(f"bad grid spec {text!r}, expected MxN") from None

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


def _as_coords(coords: Iterable) -> tuple[AngularCoord, ...]:
    return tuple(AngularCoord(int(u), int(v)) for u, v in coords)


@dataclass(frozen=True)
class SamplingPattern:
    """Ordered set of K distinct sampled angular positions."""

    coords: tuple[AngularCoord, ...]

    def __init__(self, coords: Iterable):
        coords = _as_coords(coords)
        if not coords:
            raise ValueError("sampling pattern must contain at least one coordinate")
        if len(set(coords)) != len(coords):
            raise ValueError(f"duplicate coordinates in pattern {coords}")
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self) -> Iterator[AngularCoord]:
        return iter(self.coords)

    def __contains__(self, coord) -> bool:
        return AngularCoord(*coord) in self.coords

    def validate(self, grid: AngularGrid) -> None:
        outside = [c for c in self.coords if c not in grid]
        if outside:
            raise ValueError(f"pattern coordinates {outside} outside {grid} grid")

    def as_array(self) -> np.ndarray:
        return np.array(self.coords, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def parse(cls, text: str) -> "SamplingPattern":
        """Parse ``"1,1;1,7;7,1"`` or newline-separated ``u,v`` lines."""
        coords = []
        for chunk in text.replace("\n", ";").split(";"):
            chunk = chunk.strip()
            if not chunk or chunk.startswith("#"):
                continue
            u, v = chunk.split(",")
            coords.append((int(u), int(v)))
        return cls(coords)

    def to_text(self) -> str:
        return "".join(f"{c.u},{c.v}\n" for c in self.coords)

    def __str__(self) -> str:
        return ";".join(str(c) for c in self.coords)

    @classmethod
    def corners(cls, grid: AngularGrid) -> "SamplingPattern":
        m, n = grid.rows, grid.cols
        return cls(dict.fromkeys([(1, 1), (1, n), (m, 1), (m, n)]))


@dataclass(frozen=True)
class TargetSet:
    """Angular positions to synthesize; disjoint from the sampled pattern."""

    coords: tuple[AngularCoord, ...]

    def __init__(self, coords: Iterable):
        object.__setattr__(self, "coords", _as_coords(coords))

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self) -> Iterator[AngularCoord]:
        return iter(self.coords)

    def __contains__(self, coord) -> bool:
        return AngularCoord(*coord) in self.coords


def complement_pattern(grid: AngularGrid, pattern: SamplingPattern) -> TargetSet:
    """All grid positions not in ``pattern``, row-major."""
    pattern.validate(grid)
    sampled = set(pattern.coords)
    return TargetSet(c for c in grid if c not in sampled)


@dataclass(frozen=True, eq=False)
class LightField:
    """Densely sampled 4-D light field with samples in [0, 1].

    ``data`` has shape ``(M, N, H, W, C)``.  The array is made read-only on
    construction; operations return new light fields.
    """

    data: np.ndarray
    disparity_range: tuple[float, float] | None = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 4:
            data = data[..., None]
        if data.ndim != 5:
            raise ValueError(f"light field data must be 5-D (M,N,H,W,C), got shape {data.shape}")
        if data.shape[-1] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {data.shape[-1]}")
        if not np.all(np.isfinite(data)):
            raise ValueError("light field contains non-finite samples")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.flags.writeable:
            data = data.copy()
            data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def grid(self) -> AngularGrid:
        return AngularGrid(self.data.shape[0], self.data.shape[1])

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def channels(self) -> int:
        return self.data.shape[4]

    def view(self, coord) -> np.ndarray:
        """The ``(H, W, C)`` sub-aperture image at a 1-based coordinate."""
        u, v = coord
        if (u, v) not in self.grid:
            raise IndexError(f"view {u},{v} outside {self.grid} grid")
        return self.data[u - 1, v - 1]

    def views(self, coords: Sequence) -> np.ndarray:
        """Stack of ``(K, H, W, C)`` views at the given coordinates."""
        return np.stack([self.view(c) for c in coords])

    def crop(self, y0: int, x0: int, h: int, w: int) -> "LightField":
        return LightField(self.data[:, :, y0:y0 + h, x0:x0 + w], self.disparity_range)

    @classmethod
    def from_views(cls, grid: AngularGrid, views: dict, disparity_range=None) -> "LightField":
        """Assemble from a ``{coord: (H, W[, C]) array}`` mapping covering the grid."""
        missing = [c for c in grid if c not in views and tuple(c) not in views]
        if missing:
            raise ValueError(f"missing views {missing}")
        first = np.asarray(next(iter(views.values())))
        shape = first.shape if first.ndim == 3 else first.shape + (1,)
        data = np.empty((grid.rows, grid.cols) + shape, dtype=np.float64)
        for c in grid:
            img = np.asarray(views[c] if c in views else views[tuple(c)], dtype=np.float64)
            data[c.u - 1, c.v - 1] = img.reshape(shape)
        return cls(data, disparity_range)


@dataclass(frozen=True, eq=False)
class Epi:
    """Epipolar-plane image: rows are the angular axis, columns spatial."""

    image: np.ndarray
    axes: tuple[str, str]
    fixed_angular: int
    fixed_spatial: int


def extract_epi(lf: LightField, orientation: str, fixed_angular: int, fixed_spatial: int,
                channel: int | None = None) -> Epi:
    """Cut an EPI out of ``lf``.

    A horizontal EPI fixes the row ``u`` (1-based) and image row ``y`` (0-based)
    and returns the ``(v, x)`` slice; a vertical one fixes ``v`` and ``x`` and
    returns ``(u, y)``.  Color light fields are reduced to luma unless a
    ``channel`` is given.
    """
    data = lf.data
    if channel is not None:
        data = data[..., channel]
    elif lf.channels == 3:
        data = data @ LUMA_WEIGHTS
    else:
        data = data[..., 0]
    if orientation in ("horizontal", "h"):
        if not 1 <= fixed_angular <= lf.grid.rows:
            raise IndexError(f"u={fixed_angular} outside 1..{lf.grid.rows}")
        if not 0 <= fixed_spatial < lf.height:
            raise IndexError(f"y={fixed_spatial} outside 0..{lf.height - 1}")
        img = data[fixed_angular - 1, :, fixed_spatial, :]
        axes = ("v", "x")
    elif orientation in ("vertical", "v"):
        if not 1 <= fixed_angular <= lf.grid.cols:
            raise IndexError(f"v={fixed_angular} outside 1..{lf.grid.cols}")
        if not 0 <= fixed_spatial < lf.width:
            raise IndexError(f"x={fixed_spatial} outside 0..{lf.width - 1}")
        img = data[:, fixed_angular - 1, :, fixed_spatial]
        axes = ("u", "y")
    else:
        raise ValueError(f"orientation must be horizontal or vertical, got {orientation!r}")
    return Epi(np.array(img), axes, fixed_angular, fixed_spatial)


def to_luma(lf: LightField) -> LightField:
    """BT.601 luma of a color light field."""
    if lf.channels != 3:
        raise ValueError(f"to_luma needs a 3-channel light field, got C={lf.channels}")
    return LightField((lf.data @ LUMA_WEIGHTS)[..., None], lf.disparity_range)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """BT.601 full-range YCbCr (chroma centred on zero) on the last axis."""
    y = rgb @ LUMA_WEIGHTS
    cb = (rgb[..., 2] - y) / (2 * (1 - LUMA_WEIGHTS[2]))
    cr = (rgb[..., 0] - y) / (2 * (1 - LUMA_WEIGHTS[0]))
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + 2 * (1 - LUMA_WEIGHTS[0]) * cr
    b = y + 2 * (1 - LUMA_WEIGHTS[2]) * cb
    g = (y - LUMA_WEIGHTS[0] * r - LUMA_WEIGHTS[2] * b) / LUMA_WEIGHTS[1]
    return np.stack([r, g, b], axis=-1)
