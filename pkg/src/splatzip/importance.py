"""Gaussian importance scoring and CDF-threshold pruning."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rasterizer import RenderStats

MORTON_BITS = 21
TAU_PRESETS = {"xs": 0.96, "s": 0.98, "m": 0.99, "l": 0.999, "xl": 0.9999}


class ImportanceConfigError(ValueError):
    pass


def validate_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau <= 1.0:
        raise ImportanceConfigError(f"tau must lie in (0, 1], got {tau}")
    return tau


def base_importance(stats: RenderStats) -> np.ndarray:
    """Total blending weight for Gaussians that dominate at least one ray, else 0."""
    return np.where(stats.is_max_contributor, stats.weight_sum, 0.0)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_keys(grid: np.ndarray) -> np.ndarray:
    """Interleave integer (N, 3) grid coordinates (x lowest) into uint64 keys."""
    grid = np.asarray(grid)
    return _spread_bits(grid[:, 0]) | (_spread_bits(grid[:, 1]) << np.uint64(1)) | (
        _spread_bits(grid[:, 2]) << np.uint64(2))


def quantize_to_grid(positions, aabb, bits: int = MORTON_BITS) -> np.ndarray:
    lo, hi = np.asarray(aabb, dtype=np.float64)
    ext = hi - lo
    ext = np.where(ext <= 0, 1e-9, ext)
    top = (1 << bits) - 1
    g = np.floor((np.asarray(positions, dtype=np.float64) - lo) / ext * top + 0.5)
    return np.clip(g, 0, top).astype(np.uint64)


def morton_order(positions, aabb) -> np.ndarray:
    """Stable permutation sorting ``positions`` along the Z-curve over ``aabb``."""
    keys = morton_keys(quantize_to_grid(positions, aabb))
    return np.argsort(keys, kind="stable")


def approx_neighbors(order: np.ndarray, k: int) -> np.ndarray:
    """(N, k) neighbor lists from adjacency in ``order``.

    Each Gaussian takes ceil(k/2) predecessors and floor(k/2) successors in
    the ordering; windows that would run off either end are shifted inward.
    """
    order = np.asarray(order)
    n = len(order)
    if k < 1 or k >= n:
        raise ImportanceConfigError(f"neighbor count K={k} must satisfy 1 <= K < N={n}")
    pos = np.arange(n)
    start = np.clip(pos - (k + 1) // 2, 0, n - 1 - k)
    window = start[:, None] + np.arange(k + 1)[None, :]
    # drop self from each (k+1)-window
    self_col = pos - start
    cols = np.arange(k + 1)[None, :]
    keep = cols != self_col[:, None]
    ranks = window[keep].reshape(n, k)
    out = np.empty((n, k), dtype=np.int64)
    out[order] = order[ranks]
    return out


def local_distinctiveness(T: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Mean L1 distance between each static feature and its neighbors' features."""
    T = np.asarray(T, dtype=np.float64)
    return np.abs(T[:, None, :] - T[neighbors]).sum(axis=2).mean(axis=1)


def final_importance(base: np.ndarray, distinct: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ImportanceConfigError("lambda must be >= 0")
    base = np.asarray(base, dtype=np.float64)
    if lam == 0:
        return base.copy()
    return base * np.power(np.asarray(distinct, dtype=np.float64), lam)


def prune_cdf(importance: np.ndarray, tau: float) -> np.ndarray:
    """Keep the shortest highest-importance prefix holding at least ``tau`` of the total."""
    tau = validate_tau(tau)
    imp = np.asarray(importance, dtype=np.float64)
    total = imp.sum()
    if not total > 0:
        raise ValueError("all importance scores are zero; nothing would be rendered")
    order = np.lexsort((np.arange(len(imp)), -imp))
    cum = np.cumsum(imp[order])
    if tau >= 1.0:
        count = int(np.count_nonzero(imp > 0))
    else:
        count = int(np.searchsorted(cum, tau * total, side="left")) + 1
        count = min(count, len(imp))
    keep = np.zeros(len(imp), dtype=bool)
    keep[order[:count]] = True
    return keep


@dataclass
class ImportanceReport:
    base: np.ndarray
    distinctiveness: np.ndarray
    importance: np.ndarray
    lam: float
    k: int
    tau: float
    keep_mask: np.ndarray

    def to_json(self) -> str:
        return json.dumps({
            "lambda": self.lam, "K": self.k, "tau": self.tau,
            "count": int(len(self.importance)), "kept": int(self.keep_mask.sum()),
            "base": self.base.tolist(), "distinctiveness": self.distinctiveness.tolist(),
            "importance": self.importance.tolist(),
            "keep": self.keep_mask.astype(int).tolist(),
        })


def score(stats: RenderStats, positions, static_features, aabb, *, lam=0.5, k=8) -> tuple:
    """(base, distinctiveness, final) importance for one scene."""
    base = base_importance(stats)
    n = len(base)
    if n < 2:
        d = np.ones(n)
    else:
        nb = approx_neighbors(morton_order(positions, aabb), min(k, n - 1))
        d = local_distinctiveness(static_features, nb)
    return base, d, final_importance(base, d, lam)


def importance_report(stats, positions, static_features, aabb, *, lam=0.5, k=8, tau=1.0) -> ImportanceReport:
    base, d, imp = score(stats, positions, static_features, aabb, lam=lam, k=k)
    return ImportanceReport(base, d, imp, lam, k, tau, prune_cdf(imp, tau))
