"""Forward-only tile rasterizer for 3D Gaussians.

Pixel ``(u, v)`` is sampled at ``(u + 0.5, v + 0.5)``. A projected Gaussian's
footprint is the axis-aligned square of half-width ``radius`` around its
center; alpha is zero outside it. Both the tile path and the brute-force
reference follow that rule, so the two agree to rounding.

With ``exact=False`` (the default) the two 3DGS runtime shortcuts are active:
contributions with alpha below 1/255 are skipped and a ray stops once its
transmittance would fall below 1e-4. ``exact=True`` disables both.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import Camera, OmgGaussianSet, SourceGaussianSet, build_covariance, eval_sh

TILE = 16
NEAR = 0.01
COV2D_BLUR = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
_CHUNK = 2048


class ProjectedGaussian(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    depth: float
    inv_cov: np.ndarray
    radius: float
    index: int


@dataclass(frozen=True)
class Projection:
    """Projected Gaussians for one camera, sorted front to back."""

    means: np.ndarray  # (M, 2)
    covs: np.ndarray  # (M, 2, 2)
    depths: np.ndarray
    conics: np.ndarray  # (M, 3): a, b, c of the inverse covariance
    radii: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.index)

    def __getitem__(self, k) -> ProjectedGaussian:
        a, b, c = self.conics[k]
        return ProjectedGaussian(self.means[k], self.covs[k], float(self.depths[k]),
                                 np.array([[a, b], [b, c]]), float(self.radii[k]), int(self.index[k]))


@dataclass
class RenderStats:
    weight_sum: np.ndarray
    is_max_contributor: np.ndarray
    ray_count: int = 0


@dataclass
class RenderResult:
    color: np.ndarray  # (H, W, 3), clipped to [0, 1]
    weight_total: np.ndarray  # (H, W), sum of blending weights per ray
    transmittance: np.ndarray  # (H, W), residual transmittance per ray


def project(gset, camera: Camera) -> Projection:
    """EWA projection of every Gaussian in front of the near plane."""
    R, t = camera.rotation, camera.translation
    pc = gset.positions @ R.T + t
    z = pc[:, 2]
    keep = np.flatnonzero(z > NEAR)
    pc = pc[keep]
    z = z[keep]
    cov3 = build_covariance(gset.log_scales[keep], gset.rotations[keep])
    J = np.zeros((len(keep), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * pc[:, 0] / z**2
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * pc[:, 1] / z**2
    T = J @ R
    cov2 = T @ cov3 @ np.swapaxes(T, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
    cov2[:, 0, 0] += COV2D_BLUR
    cov2[:, 1, 1] += COV2D_BLUR
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = 3.0 * np.sqrt(lam_max)
    means = np.stack([camera.fx * pc[:, 0] / z + camera.cx,
                      camera.fy * pc[:, 1] / z + camera.cy], axis=1)
    order = np.lexsort((keep, z))
    return Projection(means[order], cov2[order], z[order], conics[order], radii[order], keep[order])


def alpha_at(g: ProjectedGaussian, opacity: float, x) -> float:
    d = np.asarray(x, dtype=np.float64) - g.mean
    power = -0.5 * float(d @ g.inv_cov @ d)
    return min(ALPHA_MAX, opacity * np.exp(power))


def gaussian_colors(gset: SourceGaussianSet, idx: np.ndarray, camera: Camera) -> np.ndarray:
    dirs = gset.positions[idx] - camera.center
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    rgb = eval_sh(gset.sh_dc[idx], gset.sh_rest[idx], dirs)
    return np.maximum(rgb, 0.0)


def _tile_ranges(proj: Projection, ntx: int, nty: int):
    m, r = proj.means, proj.radii
    tx0 = np.ceil((m[:, 0] - r - (TILE - 0.5)) / TILE - 1e-9).astype(np.int64)
    tx1 = np.floor((m[:, 0] + r - 0.5) / TILE + 1e-9).astype(np.int64)
    ty0 = np.ceil((m[:, 1] - r - (TILE - 0.5)) / TILE - 1e-9).astype(np.int64)
    ty1 = np.floor((m[:, 1] + r - 0.5) / TILE + 1e-9).astype(np.int64)
    return np.clip(tx0, 0, ntx), np.clip(tx1, -1, ntx - 1), np.clip(ty0, 0, nty), np.clip(ty1, -1, nty - 1)


def bin_tiles(proj: Projection, width: int, height: int):
    """Bin projection ranks into 16x16 tiles.

    Returns ``(ntx, nty, bounds, ranks)``: tile ``t`` (row-major) covers
    ``ranks[bounds[t]:bounds[t + 1]]``, front to back.
    """
    ntx, nty = -(-width // TILE), -(-height // TILE)
    tx0, tx1, ty0, ty1 = _tile_ranges(proj, ntx, nty)
    nx = np.maximum(tx1 - tx0 + 1, 0)
    ny = np.maximum(ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    rank = np.repeat(np.arange(len(proj)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_r = np.repeat(nx, counts)
    tx = np.repeat(tx0, counts) + local % np.maximum(nx_r, 1)
    ty = np.repeat(ty0, counts) + local // np.maximum(nx_r, 1)
    tile = ty * ntx + tx
    order = np.argsort(tile, kind="stable")
    tile, rank = tile[order], rank[order]
    bounds = np.searchsorted(tile, np.arange(ntx * nty + 1))
    return ntx, nty, bounds, rank


def _composite_tile(ranks, proj, opac, colors, px, py, exact, want_stats):
    """Front-to-back compositing of ``ranks`` over the pixel centers ``px, py``."""
    npix = len(px)
    T = np.ones(npix)
    done = np.zeros(npix, dtype=bool)
    acc = np.zeros((npix, 3))
    wtot = np.zeros(npix)
    best_w = np.zeros(npix)
    best_rank = np.full(npix, -1, dtype=np.int64)
    wsum = np.zeros(len(ranks)) if want_stats else None
    for s in range(0, len(ranks), _CHUNK):
        g = ranks[s:s + _CHUNK]
        dx = px[None, :] - proj.means[g, 0:1]
        dy = py[None, :] - proj.means[g, 1:2]
        ca, cb, cc = proj.conics[g, 0:1], proj.conics[g, 1:2], proj.conics[g, 2:3]
        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
        alpha = np.minimum(ALPHA_MAX, opac[g, None] * np.exp(power))
        r = proj.radii[g, None]
        alpha[(np.abs(dx) > r) | (np.abs(dy) > r)] = 0.0
        if not exact:
            alpha[alpha < ALPHA_MIN] = 0.0
            alpha[:, done] = 0.0
            stop = T[None, :] * np.cumprod(1.0 - alpha, axis=0) < T_MIN
            alpha[stop] = 0.0
            done |= stop[-1]
        one_minus = 1.0 - alpha
        t_incl = np.cumprod(one_minus, axis=0) * T[None, :]
        t_excl = np.empty_like(t_incl)
        t_excl[0] = T
        t_excl[1:] = t_incl[:-1]
        w = alpha * t_excl
        acc += w.T @ colors[g]
        wtot += w.sum(axis=0)
        T = t_incl[-1]
        if want_stats:
            wsum[s:s + len(g)] = w.sum(axis=1)
            k = np.argmax(w, axis=0)
            wk = w[k, np.arange(npix)]
            better = wk > best_w
            best_w[better] = wk[better]
            best_rank[better] = g[k[better]]
    return acc, wtot, T, best_rank, wsum


def _render_one(gset: SourceGaussianSet, camera: Camera, background, exact, want_stats, threads):
    W, H = camera.width, camera.height
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    proj = project(gset, camera)
    opac = gset.opacities[proj.index]
    colors = gaussian_colors(gset, proj.index, camera)
    ntx, nty, bounds, ranks = bin_tiles(proj, W, H)

    def work(tile_id):
        ty, tx = divmod(tile_id, ntx)
        u = np.arange(tx * TILE, min((tx + 1) * TILE, W))
        v = np.arange(ty * TILE, min((ty + 1) * TILE, H))
        uu, vv = np.meshgrid(u, v)
        px, py = uu.ravel() + 0.5, vv.ravel() + 0.5
        g = ranks[bounds[tile_id]:bounds[tile_id + 1]]
        return (u, v) + _composite_tile(g, proj, opac, colors, px, py, exact, want_stats)

    tiles = range(ntx * nty)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, tiles))
    else:
        results = [work(t) for t in tiles]

    color = np.empty((H, W, 3))
    trans = np.empty((H, W))
    wtotal = np.empty((H, W))
    wsum = np.zeros(gset.count)
    flags = np.zeros(gset.count, dtype=bool)
    for tile_id, (u, v, acc, wt, T, best_rank, ws) in zip(tiles, results):
        shape = (len(v), len(u))
        color[v[0]:v[-1] + 1, u[0]:u[-1] + 1] = (acc + T[:, None] * bg).reshape(shape + (3,))
        trans[v[0]:v[-1] + 1, u[0]:u[-1] + 1] = T.reshape(shape)
        wtotal[v[0]:v[-1] + 1, u[0]:u[-1] + 1] = wt.reshape(shape)
        if want_stats:
            g = ranks[bounds[tile_id]:bounds[tile_id + 1]]
            wsum += np.bincount(proj.index[g], weights=ws, minlength=gset.count)
            hit = best_rank[best_rank >= 0]
            flags[proj.index[hit]] = True
    result = RenderResult(np.clip(color, 0.0, 1.0), wtotal, trans)
    return result, wsum, flags


def _as_source(gset):
    if isinstance(gset, OmgGaussianSet):
        from .field import export_decoded
        return export_decoded(gset)
    return gset


def render_full(gset, camera: Camera, background=(0.0, 0.0, 0.0), *, exact=False, threads=1) -> RenderResult:
    gset = _as_source(gset)
    return _render_one(gset, camera, background, exact, False, threads)[0]


def render(gset, camera: Camera, background=(0.0, 0.0, 0.0), *, exact=False, threads=1) -> np.ndarray:
    """Render an (H, W, 3) float image in [0, 1]."""
    return render_full(gset, camera, background, exact=exact, threads=threads).color


def render_with_stats(gset, cameras: Sequence[Camera], background=(0.0, 0.0, 0.0), *,
                      exact=False, threads=1):
    """Render every camera and accumulate per-Gaussian blending statistics.

    ``weight_sum[i]`` sums Gaussian i's blending weight over all rays of all
    cameras; ``is_max_contributor[i]`` is set when i holds the largest
    (non-zero) weight on at least one ray, ties going to the nearer Gaussian.
    """
    if len(cameras) == 0:
        raise ValueError("render_with_stats needs at least one camera")
    gset = _as_source(gset)
    images = []
    wsum = np.zeros(gset.count)
    flags = np.zeros(gset.count, dtype=bool)
    rays = 0
    for cam in cameras:
        res, ws, fl = _render_one(gset, cam, background, exact, True, threads)
        images.append(res.color)
        wsum += ws
        flags |= fl
        rays += cam.width * cam.height
    return images, RenderStats(wsum, flags, rays)
