"""Deterministic synthetic scenes and camera rigs for tests and demos."""

from __future__ import annotations

import numpy as np

from .core import SH_C0, Camera, SourceGaussianSet


def _quat_mul(a, b):
    aw, ax, ay, az = a.T
    bw, bx, by, bz = b.T
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=1)


def _align_z(normals, spin):
    """Quaternions turning +z onto ``normals`` after spinning by ``spin`` about z."""
    nx, ny, nz = normals.T
    q = np.stack([1.0 + nz, -ny, nx, np.zeros_like(nz)], axis=1)
    flip = nz < -0.999999
    q[flip] = [0.0, 1.0, 0.0, 0.0]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    s = np.stack([np.cos(spin / 2), 0 * spin, 0 * spin, np.sin(spin / 2)], axis=1)
    return _quat_mul(q, s)


def synth_scene(n: int, seed: int = 0, clusters: int = 16, noise: float = 0.03,
                footprint: float = 0.8) -> SourceGaussianSet:
    """Gaussians clustered on flat disc patches inside [-1, 1]^3.

    Colors, view-dependent SH and opacity are smooth functions of position,
    so the appearance network has structure to learn; ``noise`` adds
    per-Gaussian DC jitter that only the per-Gaussian features can absorb.
    Splat radius tracks the local point spacing times ``footprint``.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.6, 0.6, (clusters, 3))
    normals = rng.normal(size=(clusters, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    radius = rng.uniform(0.25, 0.45, clusters)
    helper = np.where(np.abs(normals[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)

    which = rng.integers(clusters, size=n)
    r = radius[which] * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, n)
    off = rng.normal(size=n) * 0.02 * radius[which]
    pos = (centers[which] + (r * np.cos(th))[:, None] * u[which] + (r * np.sin(th))[:, None] * v[which]
           + off[:, None] * normals[which])
    pos = np.clip(pos, -1.0, 1.0)

    density = np.bincount(which, minlength=clusters) / (np.pi * radius**2)
    spacing = 1.0 / np.sqrt(np.maximum(density[which], 1e-9))
    base = np.log(footprint * spacing)[:, None] + rng.normal(0.0, 0.15, (n, 3))
    base[:, 2] = np.log(0.1 * footprint * spacing) + rng.normal(0.0, 0.15, n)
    q = _align_z(normals[which], rng.uniform(0, 2 * np.pi, n))

    freq = rng.normal(0.0, 1.6, (3, 3))
    phase = rng.uniform(0, 2 * np.pi, 3)
    rgb = 0.5 + 0.35 * np.sin(pos @ freq + phase)
    sh_dc = (rgb - 0.5) / SH_C0 + noise * rng.normal(size=(n, 3))

    rfreq = rng.normal(0.0, 1.0, (3, 45))
    rphase = rng.uniform(0, 2 * np.pi, 45)
    amp = np.tile(np.repeat([0.1, 0.05, 0.025], [3, 5, 7]), 3)
    sh_rest = amp * np.sin(pos @ rfreq + rphase)

    ofreq = rng.normal(0.0, 1.2, 3)
    opac = 0.75 + 0.2 * np.sin(pos @ ofreq + rng.uniform(0, 2 * np.pi))
    return SourceGaussianSet(pos, base, q, np.clip(opac, 0.05, 0.99), sh_dc, sh_rest)


def orbit_cameras(count: int, width: int = 96, height: int = 96, radius: float = 3.2,
                  fov_deg: float = 50.0, seed: int = 0, image_pattern: str = "images/cam_{:03d}.png"):
    """Cameras on a ring around the origin with jittered elevation, all looking at it."""
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(count):
        az = 2 * np.pi * i / count + rng.uniform(-0.1, 0.1)
        el = rng.uniform(-0.35, 0.5)
        eye = radius * np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        cams.append(Camera.look_at(eye, [0.0, 0.0, 0.0], width=width, height=height, fov_deg=fov_deg,
                                   image_path=image_pattern.format(i)))
    return cams
