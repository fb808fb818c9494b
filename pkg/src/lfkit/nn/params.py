"""Named parameters, Adam, checkpoints and the finite-difference checker."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named float64 parameters plus per-parameter Adam moments and step counts."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already defined")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        self.steps[name] = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        for k in self.params:
            out.add(k, self.params[k])
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
            out.steps[k] = self.steps[k]
        return out


def init_conv(store: ParamStore, name: str, cin: int, cout: int, kernel: int,
              rng: np.random.Generator, zero: bool = False, gain: float = 1.0) -> None:
    """Uniform fan-in initialization.

    Weights are ``U(-a, a)`` with ``a = gain * sqrt(3 / fan_in)``, so unit-variance
    inputs give outputs of variance ``gain**2``; ``gain = sqrt(2)`` is the He
    choice for rectifiers.  Biases start at zero.
    """
    bound = gain * np.sqrt(3.0 / (cin * kernel * kernel))
    shape = (cout, cin, kernel, kernel)
    w = np.zeros(shape) if zero else rng.uniform(-bound, bound, size=shape)
    b = np.zeros(cout)
    store.add(f"{name}.weight", w)
    store.add(f"{name}.bias", b)


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter in ``store``."""
    missing = [k for k in store.params if k not in grads]
    if missing:
        raise KeyError(f"missing gradients for {missing}")
    for name, p in store.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        t = store.steps[name] + 1
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        store.steps[name] = t


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
               delta: float = 1e-4, max_coords: int | None = None, seed: int = 0,
               details: bool = False):
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    Returns the maximum over checked coordinates of
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``.  ``max_coords`` caps the
    coordinates probed per parameter (chosen at random); ``None`` checks all.
    With ``details`` a per-parameter dict of errors is returned as well.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
    loss = f(tensors)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    rng = np.random.default_rng(seed)

    def value(name, flat_index, step):
        trial = {k: Tensor(v) for k, v in base.items()}
        arr = base[name].copy()
        arr.reshape(-1)[flat_index] += step
        trial[name] = Tensor(arr)
        out = f(trial).data
        if not np.isfinite(out).all():
            raise FloatingPointError(f"non-finite loss perturbing {name}[{flat_index}]")
        return float(out)

    worst = 0.0
    per_param = {}
    for name, arr in base.items():
        g_ad = tensors[name].grad
        g_ad = np.zeros_like(arr) if g_ad is None else np.asarray(g_ad, dtype=np.float64).reshape(arr.shape)
        indices = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            indices = rng.choice(arr.size, size=max_coords, replace=False)
        err = 0.0
        for i in indices:
            g_fd = (value(name, i, delta) - value(name, i, -delta)) / (2 * delta)
            a = g_ad.reshape(-1)[i]
            rel = abs(a - g_fd) / max(abs(a), abs(g_fd), 1e-8)
            err = max(err, rel)
        per_param[name] = err
        worst = max(worst, err)
    return (worst, per_param) if details else worst


def save_checkpoint(path, store: ParamStore, meta: Mapping | None = None) -> None:
    """Write ``manifest.json`` and ``params.bin`` (little-endian float64, manifest order)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / "params.bin", "wb") as f:
        for name, arr in store.params.items():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                            "steps": store.steps[name]})
            offset += arr.size
    manifest = {"format": "lfkit-params-v1", "seed": store.seed, "params": entries}
    if meta:
        manifest.update(meta)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    blob = np.fromfile(path / "params.bin", dtype="<f8")
    store = ParamStore(manifest.get("seed", 0))
    for entry in manifest["params"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > blob.size:
            raise ValueError(f"{path}: parameter blob too short for {entry['name']}")
        store.add(entry["name"], blob[start:start + size].reshape(entry["shape"]))
        store.steps[entry["name"]] = entry.get("steps", 0)
    return store, manifest
