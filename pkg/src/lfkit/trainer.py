"""Patch-based training loop with Adam and plateau-halved learning rate."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .core import LightField, SamplingPattern, TargetSet, complement_pattern, to_luma
from .loss import LossWeights, objective
from .model import ModelConfig, coarse_forward, init_params, refine_forward
from .nn import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    patch_size: int = 64
    batch_size: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # plateau rule: halve lr after `patience` iterations whose moving-average
    # loss has not improved on the best by a relative `delta`
    window: int = 100
    delta: float = 1e-3
    patience: int = 500
    max_iterations: int = 10000
    seed: int = 0
    policy: str = "fixed"  # fixed | random | range
    pattern: SamplingPattern | None = None
    k: int = 4
    k_range: tuple[int, int] = (2, 4)
    grad_accum: int = 1
    precision: str = "single"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1 or self.window < 1:
            raise ValueError("patience and window must be at least 1")
        if self.policy not in ("fixed", "random", "range"):
            raise ValueError(f"unknown pattern policy {self.policy!r}")
        if self.policy == "fixed" and self.pattern is None:
            raise ValueError("fixed pattern policy needs a pattern")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch size and accumulation must be at least 1")


@dataclass
class TrainingSample:
    sparse: np.ndarray  # (K, h, w) luma
    pattern: SamplingPattern
    targets: TargetSet
    gt: np.ndarray  # (M, N, h, w) luma patch of the full grid


@dataclass
class TrainResult:
    store: nn.ParamStore
    trace: list  # (iteration, loss, lr)
    model_config: ModelConfig

    def write_trace(self, path) -> None:
        write_trace(path, self.trace)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "loss", "lr"])
        for it, loss, lr in trace:
            writer.writerow([it, repr(float(loss)), repr(float(lr))])


def _draw_pattern(grid, cfg: TrainConfig, rng: np.random.Generator) -> SamplingPattern:
    if cfg.policy == "fixed":
        return cfg.pattern
    if cfg.policy == "random":
        k = cfg.k
    else:
        k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
    if not 1 <= k < grid.size:
        raise ValueError(f"cannot draw {k} inputs on a {grid} grid")
    cells = np.sort(rng.choice(grid.size, size=k, replace=False))
    return SamplingPattern((int(c) // grid.cols + 1, int(c) % grid.cols + 1) for c in cells)


def sample_training_patch(lf: LightField, cfg: TrainConfig, rng: np.random.Generator) -> TrainingSample:
    """Random spatial crop of every view plus a sampling pattern drawn per policy."""
    size = cfg.patch_size
    if lf.height < size or lf.width < size:
        raise ValueError(f"light field {lf.height}x{lf.width} is smaller than patch size {size}")
    luma = to_luma(lf).data[..., 0] if lf.channels == 3 else lf.data[..., 0]
    y0 = int(rng.integers(0, lf.height - size + 1))
    x0 = int(rng.integers(0, lf.width - size + 1))
    patch = np.asarray(luma[:, :, y0:y0 + size, x0:x0 + size], dtype=np.float64)
    grid = lf.grid
    pattern = _draw_pattern(grid, cfg, rng)
    pattern.validate(grid)
    sparse = np.stack([patch[c.u - 1, c.v - 1] for c in pattern])
    return TrainingSample(sparse, pattern, complement_pattern(grid, pattern), patch)


def forward_loss(p: dict, config: ModelConfig, sample: TrainingSample, weights: LossWeights,
                 normalize: bool = True):
    """Differentiable end-to-end objective on one training sample.

    Returns ``(loss, coarse_views, refined_views)`` with the view stacks
    restricted to the targets.
    """
    grid_m, grid_n = sample.gt.shape[:2]
    from .core import AngularGrid

    grid = AngularGrid(grid_m, grid_n)
    targets = list(sample.targets)
    coarse, disp, _ = coarse_forward(p, config, sample.sparse, sample.pattern.coords, targets)
    h, w = sample.sparse.shape[1:]
    # assemble the full (M*N, h, w) stack: synthesized views first, then inputs
    order = np.empty(grid.size, dtype=np.intp)
    for t, q in enumerate(targets):
        order[(q.u - 1) * grid_n + q.v - 1] = t
    for k, c in enumerate(sample.pattern):
        order[(c.u - 1) * grid_n + c.v - 1] = len(targets) + k
    stack = nn.concat([coarse, Tensor(sample.sparse)], axis=0)[order]
    mask = np.zeros(grid.size)
    target_idx = np.array([(q.u - 1) * grid_n + q.v - 1 for q in targets], dtype=np.intp)
    mask[target_idx] = 1.0
    refined_all = refine_forward(p, config, stack, grid, mask)
    refined = refined_all[target_idx]
    gt = np.stack([sample.gt[q.u - 1, q.v - 1] for q in targets])
    loss = objective(Tensor(gt), coarse, refined, disp, weights, normalize=normalize)
    return loss, coarse, refined


def train_step(store: nn.ParamStore, config: ModelConfig, samples: Sequence[TrainingSample],
               weights: LossWeights, lr: float, cfg: TrainConfig) -> float:
    """Forward, backward and one Adam update; returns the pre-update loss."""
    if isinstance(samples, TrainingSample):
        samples = [samples]
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in store.params.items()}
    for sample in samples:
        p = store.tensors(requires_grad=True)
        loss, _, _ = forward_loss(p, config, sample, weights)
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite training loss {value}")
        loss.backward()
        for k, t in p.items():
            if t.grad is not None:
                grads[k] += t.grad
        total += value
    n = len(samples)
    for k in grads:
        grads[k] /= n
        if not np.all(np.isfinite(grads[k])):
            raise FloatingPointError(f"non-finite gradient for {k}")
    nn.adam_step(store, grads, lr, cfg.beta1, cfg.beta2, cfg.eps)
    for k, v in store.params.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"parameter {k} became non-finite")
    return total / n


class PlateauSchedule:
    """Halve the learning rate when the windowed mean loss stops improving."""

    def __init__(self, lr: float, window: int, delta: float, patience: int):
        self.lr = lr
        self.window = deque(maxlen=window)
        self.delta = delta
        self.patience = patience
        self.best = math.inf
        self.stale = 0
        self.halvings = 0

    def update(self, loss: float) -> float:
        self.window.append(loss)
        if len(self.window) < self.window.maxlen:
            return self.lr
        avg = sum(self.window) / len(self.window)
        if avg < self.best * (1 - self.delta):
            self.best = avg
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= 0.5
                self.halvings += 1
                self.stale = 0
                self.best = avg
        return self.lr


def train(dataset: Sequence[LightField], cfg: TrainConfig, weights: LossWeights = LossWeights(),
          model_config: ModelConfig | None = None, store: nn.ParamStore | None = None,
          callback: Callable[[int, nn.ParamStore, list], bool] | None = None) -> TrainResult:
    """Iterate :func:`train_step` over randomly sampled patches.

    ``callback(iteration, store, trace)`` runs after every step; returning
    ``True`` stops training early.
    """
    if not dataset:
        raise ValueError("empty training set")
    model_config = model_config or ModelConfig()
    if store is None:
        store = init_params(model_config, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    schedule = PlateauSchedule(cfg.lr, cfg.window, cfg.delta, cfg.patience)
    trace = []
    with nn.precision(cfg.precision):
        for it in range(cfg.max_iterations):
            lr = schedule.lr
            samples = []
            for _ in range(cfg.batch_size * cfg.grad_accum):
                lf = dataset[int(rng.integers(len(dataset)))]
                samples.append(sample_training_patch(lf, cfg, rng))
            loss = train_step(store, model_config, samples, weights, lr, cfg)
            trace.append((it, loss, lr))
            schedule.update(loss)
            if it % 100 == 0:
                log.info("iter %d loss %.6f lr %.3g", it, loss, lr)
            if callback is not None and callback(it, store, trace):
                break
    return TrainResult(store, trace, model_config)
