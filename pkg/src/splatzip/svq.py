"""Sub-vector quantization of Gaussian attributes.

An attribute vector of length ``L * M`` is cut into ``M`` contiguous pieces
of length ``L``; each piece has its own codebook of ``B`` float16 codewords
and is stored as one index per Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .core import OmgGaussianSet, canonical_quaternion_sign, normalize_quaternion_array

log = logging.getLogger(__name__)

GROUPS = ("scale", "rotation", "appearance")
GROUP_DIMS = {"scale": 3, "rotation": 4, "appearance": 6}


class SvqConfigError(ValueError):
    pass


class CorruptIndexError(ValueError):
    pass


@dataclass(frozen=True)
class GroupConfig:
    sub_vector_length: int
    codes_per_book: int

    @property
    def index_bits(self) -> int:
        return int(self.codes_per_book).bit_length() - 1

    def partitions(self, dim: int) -> int:
        if dim % self.sub_vector_length:
            raise SvqConfigError(f"sub-vector length {self.sub_vector_length} does not divide {dim}")
        return dim // self.sub_vector_length

    def validate(self, dim: int) -> None:
        b = self.codes_per_book
        if b < 1 or b & (b - 1):
            raise SvqConfigError(f"codes_per_book must be a power of two, got {b}")
        if b > 1 << 16:
            raise SvqConfigError("codes_per_book may not exceed 2^16")
        self.partitions(dim)


@dataclass(frozen=True)
class SvqConfig:
    scale: GroupConfig = GroupConfig(1, 2**6)
    rotation: GroupConfig = GroupConfig(2, 2**9)
    appearance: GroupConfig = GroupConfig(2, 2**10)
    kmeans_iterations: int = 10
    seed: int = 0

    def group(self, name: str) -> GroupConfig:
        return getattr(self, name)

    def validate(self) -> "SvqConfig":
        for g in GROUPS:
            self.group(g).validate(GROUP_DIMS[g])
        return self

    def bits_per_gaussian(self) -> Dict[str, int]:
        return {g: self.group(g).partitions(GROUP_DIMS[g]) * self.group(g).index_bits for g in GROUPS}


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("k-means input contains non-finite values")


def nearest(vectors: np.ndarray, book: np.ndarray, chunk: int = 8192):
    """Index of and squared distance to the nearest codeword (ties -> smallest index)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    book = np.asarray(book, dtype=np.float64)
    n = len(vectors)
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    step = max(1, chunk * 64 // max(len(book), 1))
    for s in range(0, n, step):
        v = vectors[s:s + step]
        d = np.zeros((len(v), len(book)))
        for j in range(v.shape[1]):
            diff = v[:, j:j + 1] - book[None, :, j]
            d += diff * diff
        k = np.argmin(d, axis=1)
        idx[s:s + step] = k
        dist[s:s + step] = d[np.arange(len(v)), k]
    return idx, dist


def _kmeanspp(x: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((b, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, b):
        total = d2.sum()
        if total > 0:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            j = min(j, n - 1)
        else:
            j = int(rng.integers(n))
        centers[i] = x[j]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


@dataclass
class KMeansResult:
    codebook: np.ndarray
    mse_trace: List[float]


def kmeans(vectors, b: int, iterations: int = 10, rng=None, return_trace=False):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are moved to the point currently farthest from its
    codeword. Returns the float64 codebook (B, L), or a :class:`KMeansResult`
    with the per-iteration MSE when ``return_trace`` is set.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 1:
        raise ValueError("k-means needs at least one vector")
    _check_finite(x)
    rng = rng if rng is not None else np.random.default_rng(0)
    book = _kmeanspp(x, b, rng)
    idx, dist = nearest(x, book)
    trace = [float(dist.mean())]
    for _ in range(iterations):
        counts = np.bincount(idx, minlength=b)
        sums = np.zeros_like(book)
        for j in range(x.shape[1]):
            sums[:, j] = np.bincount(idx, weights=x[:, j], minlength=b)
        filled = counts > 0
        book[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            d = np.sum((x - book[idx]) ** 2, axis=1)
            for e in empty:
                far = int(np.argmax(d))
                if d[far] <= 0:
                    break
                book[e] = x[far]
                d[far] = 0.0
        idx, dist = nearest(x, book)
        trace.append(float(dist.mean()))
        if trace[-1] == 0.0:
            break
    if return_trace:
        return KMeansResult(book, trace)
    return book


def to_half(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).astype(np.float16).astype(np.float64)


def split(z: np.ndarray, length: int) -> List[np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    return [z[:, m * length:(m + 1) * length] for m in range(z.shape[1] // length)]


def assign(z, books: List[np.ndarray]) -> np.ndarray:
    """(N, M) nearest-codeword indices for each partition of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if not books:
        raise SvqConfigError("no codebooks")
    length = books[0].shape[1]
    if z.ndim != 2 or z.shape[1] != length * len(books):
        raise SvqConfigError(f"vector dim {z.shape[-1]} does not match {len(books)} books of length {length}")
    out = np.empty((len(z), len(books)), dtype=np.int64)
    for m, (part, book) in enumerate(zip(split(z, length), books)):
        out[:, m] = nearest(part, book)[0]
    return out


def dequantize(indices, books: List[np.ndarray]) -> np.ndarray:
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != len(books):
        raise SvqConfigError("index array does not match the number of codebooks")
    parts = []
    for m, book in enumerate(books):
        i = indices[:, m]
        if i.size and (i.min() < 0 or i.max() >= len(book)):
            raise CorruptIndexError(f"partition {m}: index out of range [0, {len(book)})")
        parts.append(np.asarray(book, dtype=np.float64)[i])
    return np.concatenate(parts, axis=1) if parts else np.zeros((len(indices), 0))


def quantization_mse(z, indices, books) -> float:
    if len(z) == 0:
        return 0.0
    return float(np.mean(np.sum((np.asarray(z, dtype=np.float64) - dequantize(indices, books)) ** 2, axis=1)))


def refit_codebooks(z, indices, books: List[np.ndarray], half=True) -> List[np.ndarray]:
    """Frozen-index codebook update: each used codeword becomes its members' mean."""
    z = np.asarray(z, dtype=np.float64)
    indices = np.asarray(indices)
    length = books[0].shape[1]
    out = []
    for m, (part, book) in enumerate(zip(split(z, length), books)):
        b = len(book)
        i = indices[:, m]
        counts = np.bincount(i, minlength=b)
        new = np.array(book, dtype=np.float64)
        used = counts > 0
        for j in range(length):
            s = np.bincount(i, weights=part[:, j], minlength=b)
            new[used, j] = s[used] / counts[used]
        out.append(to_half(new) if half else new)
    return out


def train_books(z, cfg: GroupConfig, iterations: int, rng) -> List[np.ndarray]:
    """Per-partition float16 codebooks for the rows of ``z``."""
    return [to_half(kmeans(part, cfg.codes_per_book, iterations, rng)) for part in split(z, cfg.sub_vector_length)]


@dataclass
class SvqGroup:
    config: GroupConfig
    books: List[np.ndarray]
    indices: np.ndarray  # (N, M)

    def dequantize(self) -> np.ndarray:
        return dequantize(self.indices, self.books)


@dataclass
class SvqCodebookSet:
    groups: Dict[str, SvqGroup] = field(default_factory=dict)

    def __getitem__(self, name) -> SvqGroup:
        return self.groups[name]

    def bits_per_gaussian(self) -> int:
        return sum(g.indices.shape[1] * g.config.index_bits for g in self.groups.values())

    def permute(self, order) -> "SvqCodebookSet":
        return SvqCodebookSet({k: replace(g, indices=g.indices[order]) for k, g in self.groups.items()})


def group_vectors(gset: OmgGaussianSet) -> Dict[str, np.ndarray]:
    return {
        "scale": np.asarray(gset.log_scales, dtype=np.float64),
        "rotation": canonical_quaternion_sign(normalize_quaternion_array(gset.rotations)),
        "appearance": np.concatenate([gset.static_features, gset.view_features], axis=1),
    }


def apply_groups(gset: OmgGaussianSet, codes: SvqCodebookSet) -> OmgGaussianSet:
    """Replace the quantized attributes of ``gset`` by their dequantized values."""
    scale = codes["scale"].dequantize()
    rot = codes["rotation"].dequantize()
    norms = np.linalg.norm(rot, axis=1)
    rot = np.where(norms[:, None] > 0, rot, np.array([1.0, 0.0, 0.0, 0.0]))
    app = codes["appearance"].dequantize()
    return replace(gset, log_scales=scale, rotations=normalize_quaternion_array(rot),
                   static_features=app[:, :3], view_features=app[:, 3:])


def quantize_attributes(gset: OmgGaussianSet, config: SvqConfig = SvqConfig(), refit: bool = True):
    """K-means codebooks, index assignment and frozen-index refit for every group."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    vecs = group_vectors(gset)
    codes = SvqCodebookSet()
    for name in GROUPS:
        cfg = config.group(name)
        z = vecs[name]
        if len(z) == 0:
            m = cfg.partitions(GROUP_DIMS[name])
            books = [np.zeros((cfg.codes_per_book, cfg.sub_vector_length)) for _ in range(m)]
            codes.groups[name] = SvqGroup(cfg, books, np.zeros((0, m), dtype=np.int64))
            continue
        books = train_books(z, cfg, config.kmeans_iterations, rng)
        idx = assign(z, books)
        if refit:
            books = refit_codebooks(z, idx, books)
        codes.groups[name] = SvqGroup(cfg, books, idx)
        log.debug("svq %s mse=%.3g", name, quantization_mse(z, idx, books))
    return apply_groups(gset, codes), codes
