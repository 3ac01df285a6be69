"""PSNR and SSIM for float images in [0, 1]."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE); ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    r = len(w) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b) -> float:
    """Mean SSIM, Gaussian window 11 / sigma 1.5, valid region only, averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    w = gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        m = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(m.mean())
    return float(np.mean(vals))


@dataclass
class MetricReport:
    names: List[str] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    lpips: None = None  # not computed: needs a pretrained network

    def add(self, name: str, rendered, reference) -> None:
        self.names.append(name)
        self.psnr.append(psnr(rendered, reference))
        self.ssim.append(ssim(rendered, reference))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(np.minimum(self.psnr, PSNR_CAP))) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_json(self) -> str:
        cap = lambda v: min(v, PSNR_CAP)
        return json.dumps({
            "images": [{"name": n, "psnr": cap(p), "ssim": s} for n, p, s in zip(self.names, self.psnr, self.ssim)],
            "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim, "lpips": "unavailable",
        }, indent=2)

    def table(self) -> str:
        width = max([5] + [len(n) for n in self.names])
        rows = [f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            rows.append(f"{n:<{width}}  {min(p, PSNR_CAP):8.2f}  {s:7.4f}")
        rows.append(f"{'mean':<{width}}  {self.mean_psnr:8.2f}  {self.mean_ssim:7.4f}")
        rows.append("LPIPS: unavailable")
        return "\n".join(rows)
