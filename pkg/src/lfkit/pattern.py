"""Sampling-pattern scoring and optimization on a discrete angular grid.

The optimization treats every grid cell as a data point and solves a
k-means style facility-location problem by deterministic annealing.  The
continuous centers are then snapped to distinct grid cells.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import AngularGrid, SamplingPattern

ORACLE_BUDGET = 10 ** 7


@dataclass(frozen=True)
class ContinuousPattern:
    positions: np.ndarray  # (K, 2) as (u, v), 1-based

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or not len(pos):
            raise ValueError("positions must be a non-empty (K, 2) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)


@dataclass
class AnnealResult:
    pattern: ContinuousPattern
    assignment: np.ndarray  # (cells, K) soft assignment, rows sum to one
    objective: float  # hard k-means objective over all cells
    trace: list  # hard objective after each temperature stage
    converged: bool = True


def _cells(grid: AngularGrid) -> np.ndarray:
    return grid.coords_array().astype(np.int64)


def _as_pattern(pattern) -> SamplingPattern:
    return pattern if isinstance(pattern, SamplingPattern) else SamplingPattern(pattern)


def _min_sq_dist(pattern: SamplingPattern, grid: AngularGrid):
    pattern.validate(grid)
    cells = _cells(grid)
    p = pattern.as_array().astype(np.int64)
    d2 = ((cells[:, None, :] - p[None, :, :]) ** 2).sum(-1).min(axis=1)
    return d2


def pattern_objective(pattern, grid: AngularGrid) -> int:
    """Sum over novel positions of the squared distance to the nearest sample (exact integer)."""
    # sampled cells contribute zero, so summing over every cell equals the sum over novel views
    return int(_min_sq_dist(_as_pattern(pattern), grid).sum())


def min_distance_metric(pattern, grid: AngularGrid) -> float:
    """Mean Euclidean distance from each novel position to its nearest sample."""
    pattern = _as_pattern(pattern)
    d2 = _min_sq_dist(pattern, grid)
    novel = grid.size - len(pattern)
    if novel == 0:
        raise ValueError("pattern covers the whole grid; no novel positions")
    return float(np.sqrt(d2).sum() / novel)


def hard_objective(centers: np.ndarray, points: np.ndarray) -> float:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).sum())


def _responsibilities(d2: np.ndarray, temperature: float) -> np.ndarray:
    z = -(d2 - d2.min(axis=1, keepdims=True)) / temperature
    r = np.exp(z)
    return r / r.sum(axis=1, keepdims=True)


def _free_energy(d2, r, temperature):
    # annealing objective at fixed T; alternating updates never increase it
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(r > 0, r * np.log(r), 0.0)
    return float((r * d2).sum() + temperature * ent.sum())


def anneal_solve(grid: AngularGrid, k: int, rng: np.random.Generator | int = 0,
                 t_decay: float = 0.8, t_min: float = 1e-3, inner_max: int = 100,
                 tol: float = 1e-10, max_stages: int = 1000) -> AnnealResult:
    """Deterministic annealing of ``k`` continuous centers over the grid cells."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if not 1 <= k < grid.size:
        raise ValueError(f"need 1 <= K < {grid.size}, got {k}")
    points = _cells(grid).astype(np.float64)
    lo = np.array([1.0, 1.0])
    hi = np.array([grid.rows, grid.cols], dtype=np.float64)
    centers = rng.uniform(lo, hi, size=(k, 2))
    temperature = float(grid.rows ** 2 + grid.cols ** 2)
    trace = []
    converged = True
    best = (math.inf, centers.copy())
    stages = 0
    r = None
    while temperature > t_min and stages < max_stages:
        prev = math.inf
        stage_ok = False
        for _ in range(inner_max):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            r = _responsibilities(d2, temperature)
            mass = r.sum(axis=0)
            empty = mass < 1e-300
            new = (r.T @ points) / np.where(empty, 1.0, mass)[:, None]
            new[empty] = centers[empty]
            centers = np.clip(new, lo, hi)
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            f = _free_energy(d2, r, temperature)
            if abs(prev - f) < tol * max(1.0, abs(f)):
                stage_ok = True
                break
            prev = f
        # inner loops may stall near phase transitions; only the final stage decides convergence
        converged = stage_ok
        h = hard_objective(centers, points)
        if h < best[0]:
            best = (h, centers.copy())
        # report the running best so the stage trace is monotone
        trace.append(best[0])
        temperature *= t_decay
        if stages < 2 and k > 1:
            # tiny jitter keeps coincident centers from staying locked together at high T
            centers = centers + rng.normal(scale=1e-6, size=centers.shape)
        stages += 1
    if temperature > t_min:
        converged = False
    # finish with hard (T -> 0) Lloyd steps
    centers = _lloyd(best[1], points)
    h = hard_objective(centers, points)
    if h > best[0]:
        centers, h = best[1], best[0]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    assignment = np.zeros_like(d2)
    assignment[np.arange(len(points)), d2.argmin(axis=1)] = 1.0
    if not converged:
        warnings.warn("annealing did not converge within the iteration budget", RuntimeWarning)
    return AnnealResult(ContinuousPattern(centers), assignment, h, trace, converged)


def _lloyd(centers: np.ndarray, points: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    centers = centers.copy()
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        lab = d2.argmin(axis=1)
        new = centers.copy()
        for j in range(len(centers)):
            sel = lab == j
            if sel.any():
                new[j] = points[sel].mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def lloyd_refine(cont: ContinuousPattern, grid: AngularGrid) -> tuple[ContinuousPattern, float]:
    """Hard k-means refinement from ``cont``; returns centers and the all-cell objective."""
    points = _cells(grid).astype(np.float64)
    centers = _lloyd(cont.positions, points)
    return ContinuousPattern(centers), hard_objective(centers, points)


def _divergence(cells) -> int:
    return len({c[0] for c in cells}) + len({c[1] for c in cells})


def _surrounding(pos, grid: AngularGrid):
    u, v = pos
    us = sorted({int(np.clip(math.floor(u), 1, grid.rows)), int(np.clip(math.ceil(u), 1, grid.rows))})
    vs = sorted({int(np.clip(math.floor(v), 1, grid.cols)), int(np.clip(math.ceil(v), 1, grid.cols))})
    return [(a, b) for a in us for b in vs]


def _nearest_free(pos, taken, grid: AngularGrid):
    cells = [c for c in grid if tuple(c) not in taken]
    return min(cells, key=lambda c: ((c.u - pos[0]) ** 2 + (c.v - pos[1]) ** 2, c.u, c.v))


def round_pattern(cont: ContinuousPattern, grid: AngularGrid, max_candidates: int = 4 ** 8) -> SamplingPattern:
    """Snap continuous centers to ``len(cont)`` distinct grid cells.

    Each center may move to one of its (up to four) surrounding cells.  Among
    all collision-free combinations the lowest objective wins, then the
    largest count of distinct rows plus distinct columns, then the
    lexicographically smallest sorted cell list.  If no combination is
    collision-free, centers are placed greedily at their nearest free cell.
    """
    k = len(cont)
    if k > grid.size:
        raise ValueError(f"cannot place {k} samples on a {grid} grid")
    pos = cont.positions
    lo, hi = np.array([1, 1]), np.array([grid.rows, grid.cols])
    if np.any(pos < lo - 1e-9) or np.any(pos > hi + 1e-9):
        raise ValueError("continuous positions lie outside the grid")
    options = [_surrounding(p, grid) for p in pos]
    best = None
    if math.prod(len(o) for o in options) <= max_candidates:
        for combo in itertools.product(*options):
            if len(set(combo)) < k:
                continue
            cells = tuple(sorted(combo))
            key = (pattern_objective(SamplingPattern(cells), grid), -_divergence(cells), cells)
            if best is None or key < best:
                best = key
    if best is not None:
        return SamplingPattern(best[2])
    # greedy fallback: centers closest to a lattice point claim their cell first
    order = sorted(range(k), key=lambda i: float(((pos[i] - np.rint(pos[i])) ** 2).sum()))
    taken: dict = {}
    for i in order:
        c = _nearest_free(pos[i], taken, grid)
        taken[tuple(c)] = i
    return SamplingPattern(sorted(taken))


def optimize_pattern(grid: AngularGrid, k: int, restarts: int = 5, seed: int = 0) -> SamplingPattern:
    """Best rounded pattern over ``restarts`` seeded annealing runs."""
    if not 1 <= k < grid.size:
        raise ValueError(f"need 1 <= K < {grid.size}, got {k}")
    if restarts < 1:
        raise ValueError("need at least one restart")
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for s in seeds:
        res = anneal_solve(grid, k, np.random.default_rng(s))
        pat = round_pattern(res.pattern, grid)
        key = (pattern_objective(pat, grid), tuple(sorted(pat.coords)))
        if best is None or key < best[0]:
            best = (key, pat)
    return best[1]


def exhaustive_oracle(grid: AngularGrid, k: int, budget: int = ORACLE_BUDGET,
                      chunk: int = 20000) -> tuple[SamplingPattern, int]:
    """Global minimizer over all K-subsets (lexicographically first among ties)."""
    if not 1 <= k <= grid.size:
        raise ValueError(f"need 1 <= K <= {grid.size}, got {k}")
    total = math.comb(grid.size, k)
    if total > budget:
        raise ValueError(f"C({grid.size},{k}) = {total} subsets exceed the budget of {budget}")
    cells = _cells(grid)
    d2 = ((cells[:, None, :] - cells[None, :, :]) ** 2).sum(-1)
    best_val, best_combo = None, None
    it = itertools.combinations(range(grid.size), k)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.intp)
        if not len(block):
            break
        vals = d2[:, block].min(axis=-1).sum(axis=0)
        i = int(np.argmin(vals))  # first minimum, combinations come in lexicographic order
        if best_val is None or vals[i] < best_val:
            best_val, best_combo = int(vals[i]), block[i]
    coords = [tuple(int(x) for x in cells[j]) for j in best_combo]
    return SamplingPattern(coords), best_val
