"""The ``.omg`` container.

Before xz compression the payload is laid out as (little-endian)::

    "OMGC" | u8 version | u64 N | f32[6] AABB (min xyz, max xyz)
    u32 config_len | config JSON (utf-8)
    u16 stream_count
    stream_count x (u8 stream_id | u64 length | payload)
    u32 CRC-32 of every preceding byte

The whole payload is then wrapped in a single xz (LZMA2) stream. All
per-Gaussian streams are stored in Morton order of the quantized positions.
"""

from __future__ import annotations

import json
import lzma
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..field import FieldWeights
from ..svq import GROUPS, GroupConfig, SvqCodebookSet, SvqGroup
from . import huffman
from .positions import PositionStreamError, decode_positions, encode_positions

MAGIC = b"OMGC"
VERSION = 1

STREAM_POSITIONS = 0x01
STREAM_INDEX_BASE = 0x10
STREAM_BOOK_BASE = 0x40
STREAM_RAW_BASE = 0x60
STREAM_FIELD = 0x70

COMPONENTS = ("Position", "Scale", "Rotation", "Appearance", "MLPs")
_GROUP_COMPONENT = {"scale": "Scale", "rotation": "Rotation", "appearance": "Appearance"}


class ContainerError(ValueError):
    """Base class for malformed or corrupted containers."""


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def index_stream_id(g: int, m: int) -> int:
    return STREAM_INDEX_BASE + 8 * g + m


def book_stream_id(g: int, m: int) -> int:
    return STREAM_BOOK_BASE + 8 * g + m


def stream_component(sid: int) -> str:
    if sid == STREAM_POSITIONS:
        return "Position"
    if sid == STREAM_FIELD:
        return "MLPs"
    for base in (STREAM_INDEX_BASE, STREAM_BOOK_BASE):
        g = (sid - base) // 8
        if 0 <= sid - base < 24:
            return _GROUP_COMPONENT[GROUPS[g]]
    if STREAM_RAW_BASE <= sid < STREAM_RAW_BASE + 3:
        return _GROUP_COMPONENT[GROUPS[sid - STREAM_RAW_BASE]]
    return "Other"


@dataclass
class SceneParts:
    """Everything a container stores, in stored (Morton) order.

    ``codes`` holds SVQ books/indices; when SVQ is disabled it is ``None``
    and ``raw`` maps group name to float32 rows instead.
    """

    aabb: np.ndarray
    qpos: np.ndarray
    field: FieldWeights
    codes: Optional[SvqCodebookSet] = None
    raw: Optional[Dict[str, np.ndarray]] = None
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.qpos)

    def permuted(self, order) -> "SceneParts":
        return SceneParts(
            self.aabb, self.qpos[order], self.field,
            self.codes.permute(order) if self.codes is not None else None,
            {k: v[order] for k, v in self.raw.items()} if self.raw is not None else None,
            self.config,
        )


@dataclass
class StreamInfo:
    stream_id: int
    length: int
    component: str


@dataclass
class ContainerLayout:
    header_bytes: int
    streams: List[StreamInfo]
    crc_bytes: int
    payload_bytes: int
    file_bytes: int

    def component_bytes(self) -> Dict[str, int]:
        out = {c: 0 for c in COMPONENTS}
        for s in self.streams:
            out[s.component] = out.get(s.component, 0) + s.length
        return out


def _config_block(parts: SceneParts) -> dict:
    cfg = dict(parts.config)
    if parts.codes is not None:
        cfg["svq"] = {g: {"sub_vector_length": parts.codes[g].config.sub_vector_length,
                          "codes_per_book": parts.codes[g].config.codes_per_book} for g in GROUPS}
    else:
        cfg["svq"] = None
    return cfg


def build_streams(parts: SceneParts) -> Tuple[List[Tuple[int, bytes]], np.ndarray]:
    """Encode every stream. Returns (streams, morton order applied to the parts)."""
    pos_bytes, order = encode_positions(parts.qpos)
    parts = parts.permuted(order)
    streams = [(STREAM_POSITIONS, pos_bytes)]
    if parts.codes is not None:
        for g, name in enumerate(GROUPS):
            grp = parts.codes[name]
            for m in range(grp.indices.shape[1]):
                streams.append((index_stream_id(g, m),
                                huffman.encode_stream(grp.indices[:, m], grp.config.codes_per_book)))
            for m, book in enumerate(grp.books):
                streams.append((book_stream_id(g, m), np.asarray(book, dtype="<f2").tobytes()))
    else:
        for g, name in enumerate(GROUPS):
            streams.append((STREAM_RAW_BASE + g, np.asarray(parts.raw[name], dtype="<f4").tobytes()))
    streams.append((STREAM_FIELD, parts.field.to_bytes()))
    return streams, order


def pack(parts: SceneParts, preset: int = 9) -> bytes:
    payload, _ = pack_payload(parts)
    return lzma.compress(payload, format=lzma.FORMAT_XZ, preset=preset)


def pack_payload(parts: SceneParts) -> Tuple[bytes, ContainerLayout]:
    streams, _ = build_streams(parts)
    aabb = np.asarray(parts.aabb, dtype=np.float64)
    if not np.array_equal(aabb.astype(np.float32).astype(np.float64), aabb):
        raise ValueError("AABB must be exactly representable in float32")
    cfg = json.dumps(_config_block(parts), sort_keys=True).encode()
    head = MAGIC + struct.pack("<BQ", VERSION, parts.count) + aabb.astype("<f4").tobytes()
    head += struct.pack("<I", len(cfg)) + cfg + struct.pack("<H", len(streams))
    body = b"".join(struct.pack("<BQ", sid, len(p)) + p for sid, p in streams)
    payload = head + body
    payload += struct.pack("<I", zlib.crc32(payload))
    layout = ContainerLayout(
        header_bytes=len(head),
        streams=[StreamInfo(sid, 9 + len(p), stream_component(sid)) for sid, p in streams],
        crc_bytes=4, payload_bytes=len(payload), file_bytes=0,
    )
    return payload, layout


def read_payload(data: bytes) -> bytes:
    try:
        return lzma.decompress(data, format=lzma.FORMAT_XZ)
    except lzma.LZMAError as e:
        if data[:6] != b"\xfd7zXZ\x00":
            raise MagicError("not an xz-wrapped container") from None
        raise ChecksumError(f"container failed its integrity check: {e}") from None


def parse_payload(payload: bytes):
    """Split a decompressed payload into header fields and raw streams."""
    if len(payload) < 4 or payload[:4] != MAGIC:
        raise MagicError("bad magic, not an OMGC container")
    if len(payload) < 5 or payload[4] != VERSION:
        raise VersionError(f"unsupported container version {payload[4] if len(payload) > 4 else None}")
    if len(payload) < 4 + 1 + 8 + 24 + 4 + 4:
        raise ContainerError("container too short")
    (crc,) = struct.unpack_from("<I", payload, len(payload) - 4)
    if zlib.crc32(payload[:-4]) != crc:
        raise ChecksumError("CRC-32 mismatch")
    try:
        (n,) = struct.unpack_from("<Q", payload, 5)
        aabb = np.frombuffer(payload, dtype="<f4", count=6, offset=13).astype(np.float64).reshape(2, 3)
        (clen,) = struct.unpack_from("<I", payload, 37)
        cfg = json.loads(payload[41:41 + clen].decode())
        off = 41 + clen
        (count,) = struct.unpack_from("<H", payload, off)
        off += 2
        header_bytes = off
        streams = {}
        infos = []
        for _ in range(count):
            sid, ln = struct.unpack_from("<BQ", payload, off)
            off += 9
            if off + ln > len(payload) - 4:
                raise ContainerError(f"stream 0x{sid:02x} overruns the payload")
            streams[sid] = payload[off:off + ln]
            infos.append(StreamInfo(sid, 9 + ln, stream_component(sid)))
            off += ln
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"malformed header: {e}") from None
    if off != len(payload) - 4:
        raise ContainerError("declared stream lengths do not match the payload size")
    layout = ContainerLayout(header_bytes, infos, 4, len(payload), 0)
    return n, aabb, cfg, streams, layout


def unpack(data: bytes) -> Tuple[SceneParts, ContainerLayout]:
    payload = read_payload(data)
    n, aabb, cfg, streams, layout = parse_payload(payload)
    layout.file_bytes = len(data)

    def need(sid):
        if sid not in streams:
            raise ContainerError(f"missing stream 0x{sid:02x}")
        return streams[sid]

    try:
        qpos = decode_positions(need(STREAM_POSITIONS))
    except PositionStreamError as e:
        raise ContainerError(str(e)) from None
    if len(qpos) != n:
        raise ContainerError(f"position stream holds {len(qpos)} points, header says {n}")
    try:
        fw = FieldWeights.from_bytes(need(STREAM_FIELD))
    except (ValueError, struct.error) as e:
        raise ContainerError(f"bad field weights: {e}") from None
    svq_cfg = cfg.get("svq")
    codes = raw = None
    if svq_cfg is not None:
        codes = SvqCodebookSet()
        for g, name in enumerate(GROUPS):
            gc = GroupConfig(**svq_cfg[name])
            m_count = gc.partitions({"scale": 3, "rotation": 4, "appearance": 6}[name])
            idx = np.empty((n, m_count), dtype=np.int64)
            books = []
            for m in range(m_count):
                try:
                    col = huffman.decode_stream(need(index_stream_id(g, m)))
                except huffman.HuffmanDecodeError as e:
                    raise ContainerError(str(e)) from None
                if len(col) != n or (n and col.max() >= gc.codes_per_book):
                    raise ContainerError(f"index stream {name}/{m} is inconsistent")
                idx[:, m] = col
                buf = need(book_stream_id(g, m))
                if len(buf) != 2 * gc.codes_per_book * gc.sub_vector_length:
                    raise ContainerError(f"codebook {name}/{m} has the wrong size")
                books.append(np.frombuffer(buf, dtype="<f2").astype(np.float64)
                             .reshape(gc.codes_per_book, gc.sub_vector_length))
            codes.groups[name] = SvqGroup(gc, books, idx)
    else:
        raw = {}
        for g, name in enumerate(GROUPS):
            dim = {"scale": 3, "rotation": 4, "appearance": 6}[name]
            buf = need(STREAM_RAW_BASE + g)
            if len(buf) != 4 * dim * n:
                raise ContainerError(f"raw {name} stream has the wrong size")
            raw[name] = np.frombuffer(buf, dtype="<f4").reshape(n, dim).astype(np.float32)
    cfg.pop("svq", None)
    return SceneParts(aabb, qpos, fw, codes, raw, cfg), layout
