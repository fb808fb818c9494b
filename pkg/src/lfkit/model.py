"""Coarse view synthesis and pseudo-4D refinement network.

Coarse stage, per target view: plane-sweep the inputs, run a shared-weight
cost calculator on each plane, regress one disparity map plus K confidence
logits from the concatenated costs, warp every input with that disparity and
blend with the softmaxed confidences.

Refinement stage: lift the intermediate light field to features, alternate
spatial convolutions (per view) with angular convolutions (per pixel), and
predict a per-view residual that is added to the synthesized views.

Inputs occupy fixed slots ``0..k_max-1``.  Unused slots are zero and flagged
absent by presence-mask channels, and their confidence is forced to zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry, nn
from .core import (
    AngularCoord,
    AngularGrid,
    LightField,
    SamplingPattern,
    TargetSet,
    complement_pattern,
    rgb_to_ycbcr,
    ycbcr_to_rgb,
)
from .geometry import ConfidenceMaps, DisparityMap, PlaneSweepVolume
from .nn import Tensor


@dataclass
class ModelConfig:
    num_planes: int = 32
    d_min: float = -4.0
    d_max: float = 4.0
    k_max: int = 4
    cost_widths: tuple[int, ...] = (16, 16, 16, 4)
    cost_kernel: int = 5
    estimator_widths: tuple[int, ...] = (200, 200, 64, 32, 16)
    estimator_kernel: int = 3
    refine_pairs: int = 3
    refine_channels: int = 32
    spatial_kernel: int = 3
    angular_kernel: int = 3
    residual_depth: int = 2
    activation: str = "leaky_relu"
    alpha: float = 0.1
    # targets synthesized per batch at inference time
    chunk: int = 8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cost_widths = tuple(int(w) for w in self.cost_widths)
        self.estimator_widths = tuple(int(w) for w in self.estimator_widths)
        if self.num_planes < 2:
            raise ValueError("need at least two disparity planes")
        if not self.d_min < self.d_max:
            raise ValueError(f"disparity range [{self.d_min}, {self.d_max}] is empty")
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        if not self.cost_widths or not self.estimator_widths:
            raise ValueError("cost calculator and estimator need at least one layer each")
        if self.residual_depth < 1:
            raise ValueError("residual head needs at least one layer")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def planes(self) -> np.ndarray:
        return np.linspace(self.d_min, self.d_max, self.num_planes)

    @property
    def cost_channels(self) -> int:
        return self.cost_widths[-1]

    @property
    def estimator_outputs(self) -> int:
        return 1 + self.k_max

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cost_widths"] = list(self.cost_widths)
        d["estimator_widths"] = list(self.estimator_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Narrow configuration that trains in minutes on one CPU core."""
        base = dict(num_planes=8, d_min=-2.0, d_max=2.0, cost_widths=(8, 4), cost_kernel=3,
                    estimator_widths=(32, 16), refine_pairs=2, refine_channels=8,
                    residual_depth=2)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True, eq=False)
class CoarseOutput:
    intermediate: LightField
    disparities: dict
    confidences: dict


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, seed: int = 0) -> nn.ParamStore:
    rng = np.random.default_rng(seed)
    store = nn.ParamStore(seed)
    g = np.sqrt(2.0) if config.activation in ("relu", "leaky_relu", "smooth_leaky_relu") else 1.0
    cin = 2 * config.k_max
    for i, width in enumerate(config.cost_widths):
        nn.init_conv(store, f"cost.{i}", cin, width, config.cost_kernel, rng, gain=g)
        cin = width
    cin = config.num_planes * config.cost_channels
    widths = config.estimator_widths + (config.estimator_outputs,)
    for i, width in enumerate(widths):
        last = i == len(widths) - 1
        nn.init_conv(store, f"est.{i}", cin, width, config.estimator_kernel, rng,
                     gain=0.1 if last else g)
        cin = width
    fc = config.refine_channels
    nn.init_conv(store, "ref.lift", 1, fc, config.spatial_kernel, rng, gain=g)
    for i in range(config.refine_pairs):
        nn.init_conv(store, f"ref.spa.{i}", fc, fc, config.spatial_kernel, rng, gain=g)
        nn.init_conv(store, f"ref.ang.{i}", fc, fc, config.angular_kernel, rng, gain=g)
    for i in range(config.residual_depth):
        last = i == config.residual_depth - 1
        # final residual layer starts at zero so refinement begins as identity
        nn.init_conv(store, f"ref.head.{i}", fc, 1 if last else fc, config.spatial_kernel, rng,
                     zero=last, gain=g)
    return store


def _tensors(params, requires_grad=False) -> dict[str, Tensor]:
    if isinstance(params, nn.ParamStore):
        return params.tensors(requires_grad)
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def _conv(p, name, x, act, config):
    y = nn.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"])
    return nn.activation(y, act, config.alpha) if act else y


# ---------------------------------------------------------------------------
# batched, differentiable building blocks


def _slot_layout(pattern: Sequence, config: ModelConfig):
    coords = [AngularCoord(*p) for p in pattern]
    if len(coords) > config.k_max:
        raise ValueError(f"{len(coords)} inputs exceed the configured capacity k_max={config.k_max}")
    presence = np.zeros(config.k_max, dtype=bool)
    presence[:len(coords)] = True
    return coords, presence


def _offsets(coords, targets, k_max):
    off = np.zeros((len(targets), k_max, 2))
    for t, q in enumerate(targets):
        for k, p in enumerate(coords):
            off[t, k] = (q.u - p.u, q.v - p.v)
    return off


def _pad_slots(sparse: np.ndarray, k_max: int) -> np.ndarray:
    out = np.zeros((k_max,) + sparse.shape[1:], dtype=sparse.dtype)
    out[:sparse.shape[0]] = sparse
    return out


def batch_psv(sparse: np.ndarray, offsets: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Plane sweep for many targets at once.

    ``sparse`` is ``(k_max, H, W)`` (absent slots zero), ``offsets`` is
    ``(T, k_max, 2)``.  Returns ``(T, k_max, L, H, W)``.
    """
    k, h, w = sparse.shape
    t = offsets.shape[0]
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    d = planes.reshape(1, 1, -1, 1, 1)
    ys = yy + d * offsets[:, :, None, None, None, 0]
    xs = xx + d * offsets[:, :, None, None, None, 1]
    base = (np.arange(k) * (h * w)).reshape(1, k, 1, 1, 1)
    taps = geometry.bilinear_taps(ys, xs, h, w, base)
    return geometry.gather(sparse.reshape(-1), taps)


PSV_EPS = 1e-3


def standardize_psv(psv: np.ndarray, presence: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance plane sweep per target, over the present slots.

    Photo-consistency shows up as small differences between slots riding on
    the image intensity; removing the level and contrast makes that signal
    the dominant one seen by the cost calculator.  Absent slots stay zero.
    """
    mask = np.asarray(presence, dtype=bool)[:, :, None, None, None]
    full = np.broadcast_to(mask, psv.shape)
    count = full.sum(axis=(1, 2, 3, 4), keepdims=True)
    mean = np.where(full, psv, 0.0).sum(axis=(1, 2, 3, 4), keepdims=True) / count
    var = np.where(full, (psv - mean) ** 2, 0.0).sum(axis=(1, 2, 3, 4), keepdims=True) / count
    return np.where(full, (psv - mean) / (np.sqrt(var) + PSV_EPS), 0.0)


def cost_features(p, config: ModelConfig, psv: np.ndarray, presence: np.ndarray) -> Tensor:
    """Shared-weight cost calculator.

    ``psv`` is ``(T, k_max, L, H, W)``; ``presence`` is ``(T, k_max)``.  Returns
    ``(T, L * cost_channels, H, W)`` with plane-major channel order.
    """
    t, k, l, h, w = psv.shape
    act = config.activation
    psv = standardize_psv(psv, presence)
    x = Tensor(psv.transpose(0, 2, 1, 3, 4).reshape(t * l, k, h, w))
    w0 = p["cost.0.weight"]
    y = nn.conv2d(x, w0[:, :k])
    # presence channels are constant across planes: convolve once per target
    mask_img = Tensor(np.broadcast_to(presence[:, :, None, None], (t, k, h, w)))
    ym = nn.conv2d(mask_img, w0[:, k:], p["cost.0.bias"])
    c0 = y.shape[1]
    y = y.reshape(t, l, c0, h, w) + ym.reshape(t, 1, c0, h, w)
    y = nn.activation(y.reshape(t * l, c0, h, w), act, config.alpha)
    for i in range(1, len(config.cost_widths)):
        y = _conv(p, f"cost.{i}", y, act, config)
    return y.reshape(t, l * config.cost_channels, h, w)


def estimate(p, config: ModelConfig, features: Tensor, presence: np.ndarray):
    """Disparity ``(T, 1, H, W)`` and confidences ``(T, k_max, H, W)`` from cost features."""
    y = features
    n = len(config.estimator_widths)
    for i in range(n):
        y = _conv(p, f"est.{i}", y, config.activation, config)
    y = _conv(p, f"est.{n}", y, None, config)
    disp = nn.scaled_tanh(y[:, :1], config.d_min, config.d_max)
    conf = nn.channel_softmax(y[:, 1:], mask=presence[:, :, None, None])
    return disp, conf


def coarse_forward(p, config: ModelConfig, sparse: np.ndarray, pattern: Sequence,
                   targets: Sequence, disparity_override=None, confidence_override=None):
    """Differentiable coarse synthesis of ``targets`` from luminance ``sparse`` (K, H, W).

    Returns ``(images (T, H, W), disparity (T, 1, H, W), confidence (T, k_max, H, W))``.
    """
    coords, presence = _slot_layout(pattern, config)
    targets = [AngularCoord(*q) for q in targets]
    clash = [q for q in targets if q in coords]
    if clash:
        raise ValueError(f"targets {clash} coincide with input positions")
    slots = _pad_slots(np.asarray(sparse, dtype=np.float64), config.k_max)
    offsets = _offsets(coords, targets, config.k_max)
    pres = np.broadcast_to(presence, (len(targets), config.k_max))
    if disparity_override is None or confidence_override is None:
        psv = batch_psv(slots, offsets, config.planes)
        disp, conf = estimate(p, config, cost_features(p, config, psv, pres), pres)
    if disparity_override is not None:
        disp = Tensor(np.asarray(disparity_override).reshape(len(targets), 1, *slots.shape[1:]))
    if confidence_override is not None:
        conf = Tensor(np.asarray(confidence_override).reshape(len(targets), config.k_max, *slots.shape[1:]))
    src = Tensor(np.broadcast_to(slots, (len(targets),) + slots.shape))
    warped = nn.warp(src, disp, offsets)
    images = (conf * warped).sum(axis=1)
    return images, disp, conf


def refine_forward(p, config: ModelConfig, intermediate: Tensor, grid: AngularGrid,
                   target_mask: np.ndarray | None = None) -> Tensor:
    """Residual refinement of an ``(M*N, H, W)`` luminance stack.

    ``target_mask`` (length M*N, truthy = synthesized view) restricts the
    residual to synthesized views; ``None`` applies it everywhere.
    """
    m, n = grid.rows, grid.cols
    k = config.angular_kernel
    if m < k or n < k:
        raise ValueError(f"angular grid {grid} is smaller than the {k}x{k} angular kernel")
    mn, h, w = intermediate.shape
    if mn != m * n:
        raise ValueError(f"stack of {mn} views does not match grid {grid}")
    act = config.activation
    feats = _conv(p, "ref.lift", intermediate.reshape(mn, 1, h, w), act, config)
    stack = nn.FeatureStack(feats, "spatial", (m, n), (h, w))
    for i in range(config.refine_pairs):
        stack = nn.FeatureStack(_conv(p, f"ref.spa.{i}", stack.tensor, act, config), "spatial", (m, n), (h, w))
        stack = nn.relayout(stack)
        stack = nn.FeatureStack(_conv(p, f"ref.ang.{i}", stack.tensor, act, config), "angular", (m, n), (h, w))
        stack = nn.relayout(stack)
    y = stack.tensor
    for i in range(config.residual_depth):
        last = i == config.residual_depth - 1
        y = _conv(p, f"ref.head.{i}", y, None if last else act, config)
    residual = y.reshape(mn, h, w)
    if target_mask is not None:
        residual = residual * np.asarray(target_mask, dtype=np.float64).reshape(mn, 1, 1)
    return intermediate + residual


# ---------------------------------------------------------------------------
# public, array-in array-out operations


def compute_cost_features(psv: PlaneSweepVolume, params, config: ModelConfig) -> np.ndarray:
    """Per-plane cost features ``(L, cost_channels, H, W)`` for one plane-sweep volume."""
    k = psv.num_inputs
    if k > config.k_max:
        raise ValueError(f"{k} inputs exceed the configured capacity k_max={config.k_max}")
    if psv.slabs.ndim != 4:
        raise ValueError("cost features need a single-channel plane-sweep volume")
    slabs = np.zeros((1, config.k_max) + psv.slabs.shape[1:])
    slabs[0, :k] = psv.slabs
    presence = np.zeros((1, config.k_max), dtype=bool)
    presence[0, :k] = True
    f = cost_features(_tensors(params), config, slabs, presence).data
    l = psv.num_planes
    return f.reshape(l, config.cost_channels, *f.shape[2:]).astype(np.float64)


def predict_disparity_confidence(features: np.ndarray, num_inputs: int, params, config: ModelConfig,
                                 target=(0, 0)):
    """Disparity and K normalized confidence maps from ``(L, C, H, W)`` cost features."""
    features = np.asarray(features)
    if features.ndim != 4 or features.shape[:2] != (config.num_planes, config.cost_channels):
        raise ValueError(f"features of shape {features.shape} do not match config "
                         f"({config.num_planes} planes x {config.cost_channels} channels)")
    if not 1 <= num_inputs <= config.k_max:
        raise ValueError(f"num_inputs must be in 1..{config.k_max}")
    h, w = features.shape[2:]
    presence = np.zeros((1, config.k_max), dtype=bool)
    presence[0, :num_inputs] = True
    disp, conf = estimate(_tensors(params), config, Tensor(features.reshape(1, -1, h, w)), presence)
    return (DisparityMap(target, disp.data[0, 0]),
            ConfidenceMaps(target, conf.data[0, :num_inputs].astype(np.float64)))


def _luma_inputs(sparse: np.ndarray):
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.ndim == 4 and sparse.shape[-1] == 3:
        ycc = rgb_to_ycbcr(sparse)
        return ycc[..., 0], ycc[..., 1:]
    if sparse.ndim == 4:
        sparse = sparse[..., 0]
    return sparse, None


def _coarse_numpy(sparse, pattern, targets, config, params, disparity=None, confidence=None):
    """Run coarse synthesis in chunks; returns luma, chroma (or None), disparity, confidence."""
    luma, chroma = _luma_inputs(sparse)
    p = _tensors(params)
    coords, _ = _slot_layout(pattern, config)
    targets = [AngularCoord(*q) for q in targets]
    t = len(targets)
    h, w = luma.shape[1:]
    img = np.empty((t, h, w))
    dmap = np.empty((t, h, w))
    cmap = np.empty((t, config.k_max, h, w))
    step = max(1, config.chunk)
    for s in range(0, t, step):
        sl = slice(s, min(t, s + step))
        d_o = None if disparity is None else disparity[sl]
        c_o = None if confidence is None else confidence[sl]
        i_, d_, c_ = coarse_forward(p, config, luma, coords, targets[sl], d_o, c_o)
        img[sl], dmap[sl], cmap[sl] = i_.data, d_.data[:, 0], c_.data
    chroma_out = None
    if chroma is not None and t:
        offsets = _offsets(coords, targets, config.k_max)
        chroma_out = np.empty((t, h, w, 2))
        for c in range(2):
            slots = _pad_slots(chroma[..., c], config.k_max)
            for s in range(0, t, step):
                sl = slice(s, min(t, s + step))
                src = np.broadcast_to(slots, (sl.stop - sl.start,) + slots.shape)
                warped = nn.warp(Tensor(src), Tensor(dmap[sl, None]), offsets[sl]).data
                chroma_out[sl, ..., c] = np.sum(cmap[sl] * warped, axis=1)
    return img, chroma_out, dmap, cmap


def synthesize_view(sparse, pattern, target, config: ModelConfig, params, disparity=None,
                    confidence=None):
    """Synthesize one view.  Returns ``(image, DisparityMap, ConfidenceMaps)``.

    ``disparity`` / ``confidence`` bypass the estimator with given maps
    (``(H, W)`` and ``(K, H, W)``).
    """
    target = AngularCoord(*target)
    k = len(pattern)
    conf = None
    if confidence is not None:
        conf = np.zeros((1, config.k_max) + np.shape(confidence)[1:])
        conf[0, :k] = confidence
    img, chroma, dmap, cmap = _coarse_numpy(
        sparse, pattern, [target], config, params,
        None if disparity is None else np.asarray(disparity)[None], conf)
    if chroma is not None:
        out = ycbcr_to_rgb(np.concatenate([img[0][..., None], chroma[0]], axis=-1))
    elif np.ndim(sparse) == 4:
        out = img[0][..., None]
    else:
        out = img[0]
    return out, DisparityMap(target, dmap[0]), ConfidenceMaps(target, cmap[0, :k])


def _assemble(sparse, pattern, grid, targets, values) -> np.ndarray:
    """Full ``(M, N, H, W, C)`` array with inputs copied and targets filled from ``values``."""
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.ndim == 3:
        sparse = sparse[..., None]
    data = np.zeros((grid.rows, grid.cols) + sparse.shape[1:])
    for k, c in enumerate(pattern):
        data[c.u - 1, c.v - 1] = sparse[k]
    for t, q in enumerate(targets):
        data[q.u - 1, q.v - 1] = values[t]
    return data


def coarse_synthesis(sparse, pattern: SamplingPattern, targets: TargetSet, config: ModelConfig,
                     params, grid: AngularGrid | None = None) -> CoarseOutput:
    """Synthesize every target independently; inputs are copied into the output."""
    pattern = pattern if isinstance(pattern, SamplingPattern) else SamplingPattern(pattern)
    targets = targets if isinstance(targets, TargetSet) else TargetSet(targets)
    if grid is None:
        every = list(pattern) + list(targets)
        grid = AngularGrid(max(c.u for c in every), max(c.v for c in every))
    pattern.validate(grid)
    overlap = [q for q in targets if q in pattern]
    if overlap:
        raise ValueError(f"targets {overlap} coincide with input positions")
    if len(targets):
        img, chroma, dmap, cmap = _coarse_numpy(sparse, pattern.coords, targets.coords, config, params)
        if chroma is None:
            values = img[..., None]
        else:
            values = ycbcr_to_rgb(np.concatenate([img[..., None], chroma], axis=-1))
    else:
        values, dmap, cmap = [], [], []
    data = _assemble(sparse, pattern.coords, grid, targets.coords, np.clip(values, 0.0, 1.0) if len(targets) else values)
    k = len(pattern)
    return CoarseOutput(
        LightField(data),
        {q: DisparityMap(q, dmap[t]) for t, q in enumerate(targets)},
        {q: ConfidenceMaps(q, cmap[t, :k]) for t, q in enumerate(targets)},
    )


def refine_lightfield(intermediate: LightField, config: ModelConfig, params,
                      targets: TargetSet | None = None) -> LightField:
    """Add the refinement residual to ``intermediate`` (only at ``targets`` when given).

    Color light fields are refined on luma; the residual is added to luma
    and chroma is kept.
    """
    grid = intermediate.grid
    data = intermediate.data
    color = intermediate.channels == 3
    ycc = rgb_to_ycbcr(data) if color else data
    luma = ycc[..., 0].reshape(grid.size, intermediate.height, intermediate.width)
    mask = None
    if targets is not None:
        mask = np.zeros(grid.size)
        for q in targets:
            mask[(q.u - 1) * grid.cols + q.v - 1] = 1.0
    out = refine_forward(_tensors(params), config, Tensor(luma), grid, mask).data.astype(np.float64)
    ycc = np.array(ycc, dtype=np.float64)
    ycc[..., 0] = out.reshape(grid.rows, grid.cols, intermediate.height, intermediate.width)
    result = ycbcr_to_rgb(ycc) if color else ycc
    if mask is not None:
        # untouched views are returned verbatim, not round-tripped through YCbCr
        keep = mask.reshape(grid.rows, grid.cols) == 0
        result[keep] = data[keep]
    return LightField(np.clip(result, 0.0, 1.0), intermediate.disparity_range)


def reconstruct(sparse, pattern: SamplingPattern, grid: AngularGrid, config: ModelConfig,
                params) -> LightField:
    """Dense ``grid`` light field from the views ``sparse`` sampled at ``pattern``."""
    pattern = pattern if isinstance(pattern, SamplingPattern) else SamplingPattern(pattern)
    pattern.validate(grid)
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.shape[0] != len(pattern):
        raise ValueError(f"{sparse.shape[0]} views supplied for a pattern of {len(pattern)}")
    targets = complement_pattern(grid, pattern)
    coarse = coarse_synthesis(sparse, pattern, targets, config, params, grid)
    if not len(targets):
        return coarse.intermediate
    return refine_lightfield(coarse.intermediate, config, params, targets)
