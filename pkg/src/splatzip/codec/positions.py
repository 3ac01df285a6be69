"""16-bit position quantization and the Morton-delta position stream.

Stream layout: ``u8 codec_id`` (0 = Morton delta), ``u64 N``, then three
LEB128 varint runs (x deltas, y deltas, z deltas) of zig-zag coded
differences between consecutive points in Morton order.
"""

from __future__ import annotations

import struct

import numpy as np

from ..importance import morton_keys

CODEC_MORTON_DELTA = 0
QMAX = 65535


class PositionStreamError(ValueError):
    pass


def quantize_positions(p, aabb) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    lo, hi = np.asarray(aabb, dtype=np.float64)
    if len(p) and (np.any(p < lo) or np.any(p > hi)):
        bad = np.flatnonzero(np.any((p < lo) | (p > hi), axis=1))
        raise ValueError(f"{len(bad)} positions lie outside the AABB (first index {bad[0]})")
    ext = np.where(hi > lo, hi - lo, 1.0)
    q = np.rint((p - lo) / ext * QMAX)
    return np.clip(q, 0, QMAX).astype(np.uint16)


def dequantize_positions(q, aabb) -> np.ndarray:
    lo, hi = np.asarray(aabb, dtype=np.float64)
    return lo + np.asarray(q, dtype=np.float64) / QMAX * (hi - lo)


def morton_permutation(q) -> np.ndarray:
    q = np.asarray(q)
    if len(q) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argsort(morton_keys(q.astype(np.uint64)), kind="stable")


def zigzag(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return ((v << 1) ^ (v >> 63)).astype(np.uint64)


def unzigzag(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.uint64)
    return (u >> np.uint64(1)).astype(np.int64) ^ -(u & np.uint64(1)).astype(np.int64)


def varint_encode(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbytes = np.ones(len(v), dtype=np.int64)
    for k in range(1, 10):
        nbytes += v >= (np.uint64(1) << np.uint64(7 * k))
    rep = np.repeat(v, nbytes)
    k = np.arange(int(nbytes.sum())) - np.repeat(np.cumsum(nbytes) - nbytes, nbytes)
    out = (rep >> (np.uint64(7) * k.astype(np.uint64))) & np.uint64(0x7F)
    more = k < np.repeat(nbytes, nbytes) - 1
    out = out | (more.astype(np.uint64) << np.uint64(7))
    return out.astype(np.uint8).tobytes()


def varint_decode(buf: bytes, count: int) -> tuple:
    """Decode ``count`` varints from the start of ``buf``; returns (values, bytes consumed)."""
    b = np.frombuffer(buf, dtype=np.uint8)
    if count == 0:
        return np.zeros(0, dtype=np.uint64), 0
    ends = np.flatnonzero(b < 0x80)
    if len(ends) < count:
        raise PositionStreamError("varint stream truncated")
    used = int(ends[count - 1]) + 1
    b = b[:used]
    starts = np.concatenate([[0], ends[:count - 1] + 1])
    lens = np.diff(np.concatenate([starts, [used]]))
    if lens.max() > 10:
        raise PositionStreamError("varint longer than 10 bytes")
    k = np.arange(used) - np.repeat(starts, lens)
    parts = (b & 0x7F).astype(np.uint64) << (np.uint64(7) * k.astype(np.uint64))
    return np.add.reduceat(parts, starts), used


def encode_positions(q) -> tuple:
    """Encode quantized positions; returns (stream_bytes, morton_permutation).

    The stream stores ``q[order]``; other per-Gaussian data must be written
    in the same order.
    """
    q = np.asarray(q, dtype=np.uint16).reshape(-1, 3)
    order = morton_permutation(q)
    s = q[order].astype(np.int64)
    d = np.diff(s, axis=0, prepend=np.zeros((1, 3), np.int64))
    body = b"".join(varint_encode(zigzag(d[:, a])) for a in range(3))
    return struct.pack("<BQ", CODEC_MORTON_DELTA, len(q)) + body, order


def decode_positions(buf: bytes) -> np.ndarray:
    """Quantized positions in stored (Morton) order."""
    try:
        codec, n = struct.unpack_from("<BQ", buf, 0)
    except struct.error:
        raise PositionStreamError("position stream header truncated") from None
    if codec != CODEC_MORTON_DELTA:
        raise PositionStreamError(f"unknown position codec id {codec}")
    if n > len(buf) * 3:
        raise PositionStreamError("declared point count exceeds stream size")
    vals, used = varint_decode(buf[9:], 3 * n)
    if 9 + used != len(buf):
        raise PositionStreamError("trailing bytes in position stream")
    d = unzigzag(vals).reshape(3, n).T
    q = np.cumsum(d, axis=0)
    if n and (q.min() < 0 or q.max() > QMAX):
        raise PositionStreamError("decoded coordinates outside the 16-bit range")
    return q.astype(np.uint16).reshape(n, 3)
