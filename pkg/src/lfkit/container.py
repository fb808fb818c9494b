"""On-disk light-field containers and PFM images.

A container is a directory holding ``meta.json`` and one image per view,
named ``view_{u:02d}_{v:02d}.png`` (8-bit) or ``.pfm`` (32-bit float).
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .core import AngularGrid, LightField

META_NAME = "meta.json"
_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)\.(png|pfm)$")


class ContainerError(ValueError):
    """Malformed or incomplete light-field container."""


def write_pfm(path, image: np.ndarray) -> None:
    """Write a little-endian PFM (scale -1.0).  Accepts (H, W), (H, W, 1) or (H, W, 3)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as PFM")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM scanlines run bottom to top
        f.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into an (H, W) or (H, W, 3) float32 array."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ContainerError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == b"PF" else 1
        buf = f.read()
    count = w * h * channels
    if len(buf) < 4 * count:
        raise ContainerError(f"{path}: truncated PFM data")
    data = np.frombuffer(buf, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].copy()


def _read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64) / 255.0


def _view_name(u: int, v: int, fmt: str) -> str:
    return f"view_{u:02d}_{v:02d}.{fmt}"


def save_lightfield(lf: LightField, path, fmt: str = "png") -> None:
    """Write ``lf`` as a container directory.

    ``fmt="png"`` quantizes to 8 bits (error at most 1/510); ``fmt="pfm"``
    stores float32 samples.
    """
    if fmt not in ("png", "pfm"):
        raise ValueError(f"unknown view format {fmt!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "rows": lf.grid.rows,
        "cols": lf.grid.cols,
        "width": lf.width,
        "height": lf.height,
        "channels": lf.channels,
        "format": fmt,
    }
    if lf.disparity_range is not None:
        meta["disparity_range"] = [float(d) for d in lf.disparity_range]
    for c in lf.grid:
        img = lf.view(c)
        target = path / _view_name(c.u, c.v, fmt)
        if fmt == "pfm":
            write_pfm(target, img)
        else:
            q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(q[..., 0] if lf.channels == 1 else q).save(target)
    (path / META_NAME).write_text(json.dumps(meta, indent=2) + "\n")


def load_lightfield(path) -> LightField:
    path = Path(path)
    meta_path = path / META_NAME
    if not meta_path.is_file():
        raise ContainerError(f"{path}: no {META_NAME} manifest")
    try:
        meta = json.loads(meta_path.read_text())
        grid = AngularGrid(int(meta["rows"]), int(meta["cols"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ContainerError(f"{meta_path}: bad manifest ({exc})") from None

    present = {}
    for entry in path.iterdir():
        m = _VIEW_RE.match(entry.name)
        if m:
            present[(int(m.group(1)), int(m.group(2)))] = entry
    stray = [k for k in present if k not in grid]
    if stray or len(present) > grid.size:
        raise ContainerError(
            f"{path}: grid mismatch, manifest says {grid} but found {len(present)} view files")
    views = {}
    for c in grid:
        if (c.u, c.v) not in present:
            raise ContainerError(f"{path}: missing view ({c.u},{c.v})")
        f = present[(c.u, c.v)]
        try:
            img = read_pfm(f) if f.suffix == ".pfm" else _read_png(f)
        except ContainerError:
            raise
        except Exception as exc:
            raise ContainerError(f"{f}: unreadable image ({exc})") from None
        views[c] = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    shapes = {v.shape for v in views.values()}
    if len(shapes) != 1:
        raise ContainerError(f"{path}: views have differing shapes {sorted(shapes)}")
    lf = LightField.from_views(grid, views, tuple(meta["disparity_range"]) if "disparity_range" in meta else None)
    for key, actual in (("width", lf.width), ("height", lf.height), ("channels", lf.channels)):
        if key in meta and int(meta[key]) != actual:
            raise ContainerError(f"{meta_path}: manifest says {key}={meta[key]} but views have {actual}")
    return lf
