"""Canonical Huffman coding of integer symbol streams.

Serialized stream layout (little-endian)::

    u32 alphabet_size
    u8  code_length[alphabet_size]      # 0 = unused symbol
    u64 symbol_count
    u64 bit_count
    bytes payload                        # MSB-first, zero padded
"""

from __future__ import annotations

import heapq
import struct

import numpy as np

MAX_ALPHABET = 1 << 16
_LOOKUP_BITS = 16


class HuffmanDecodeError(ValueError):
    pass


def code_lengths(counts) -> np.ndarray:
    """Huffman code length per symbol; unused symbols get 0, a lone symbol gets 1."""
    counts = np.asarray(counts, dtype=np.int64)
    lengths = np.zeros(len(counts), dtype=np.int64)
    used = np.flatnonzero(counts > 0)
    if len(used) == 0:
        return lengths
    if len(used) == 1:
        lengths[used[0]] = 1
        return lengths
    parent = {}
    heap = [(int(counts[s]), i, i) for i, s in enumerate(used)]
    heapq.heapify(heap)
    next_id = len(used)
    while len(heap) > 1:
        c1, _, a = heapq.heappop(heap)
        c2, _, b = heapq.heappop(heap)
        parent[a] = parent[b] = next_id
        heapq.heappush(heap, (c1 + c2, next_id, next_id))
        next_id += 1
    root = heap[0][2]
    depth = {root: 0}
    for node in range(next_id - 1, -1, -1):
        if node != root:
            depth[node] = depth[parent[node]] + 1
    for i, s in enumerate(used):
        lengths[s] = depth[i]
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Canonical code values: symbols sorted by (length, symbol) get consecutive codes."""
    lengths = np.asarray(lengths, dtype=np.int64)
    codes = np.zeros(len(lengths), dtype=np.uint64)
    order = np.lexsort((np.arange(len(lengths)), lengths))
    code = 0
    prev = 0
    for s in order:
        ln = int(lengths[s])
        if ln == 0:
            continue
        code <<= ln - prev
        codes[s] = code
        code += 1
        prev = ln
    if prev and code > (1 << prev):
        raise HuffmanDecodeError("code lengths violate the Kraft inequality")
    return codes


def _emit_bits(codes: np.ndarray, lens: np.ndarray, chunk: int = 1 << 18) -> tuple:
    pieces = []
    for s in range(0, len(codes), chunk):
        c = codes[s:s + chunk]
        ln = lens[s:s + chunk]
        total = int(ln.sum())
        starts = np.cumsum(ln) - ln
        rep_c = np.repeat(c, ln)
        rep_l = np.repeat(ln, ln).astype(np.uint64)
        off = (np.arange(total) - np.repeat(starts, ln)).astype(np.uint64)
        pieces.append(((rep_c >> (rep_l - np.uint64(1) - off)) & np.uint64(1)).astype(np.uint8))
    bits = np.concatenate(pieces) if pieces else np.zeros(0, np.uint8)
    return np.packbits(bits).tobytes(), len(bits)


def huffman_encode(symbols, alphabet_size: int):
    """Returns (code_lengths, payload_bytes, bit_count)."""
    if alphabet_size > MAX_ALPHABET:
        raise ValueError(f"alphabet size {alphabet_size} exceeds 2^16")
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        return np.zeros(0, dtype=np.uint8), b"", 0
    if symbols.min() < 0 or symbols.max() >= alphabet_size:
        raise ValueError("symbol outside alphabet")
    lengths = code_lengths(np.bincount(symbols, minlength=alphabet_size))
    if lengths.max() > 255:
        raise ValueError("code length exceeds 255 bits")
    codes = canonical_codes(lengths)
    payload, nbits = _emit_bits(codes[symbols], lengths[symbols])
    return lengths.astype(np.uint8), payload, nbits


def huffman_decode(lengths, payload: bytes, count: int, nbits: int | None = None) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if not lengths.any():
        raise HuffmanDecodeError("empty code table for a non-empty stream")
    codes = canonical_codes(lengths)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if nbits is not None:
        if nbits > len(bits):
            raise HuffmanDecodeError("bit count exceeds payload")
        bits = bits[:nbits]
    nb = len(bits)
    k = min(int(lengths.max()), _LOOKUP_BITS)
    padded = np.concatenate([bits, np.zeros(k, np.uint8)]).astype(np.int64)
    windows = np.zeros(nb, dtype=np.int64)
    for j in range(k):
        windows = (windows << 1) | padded[j:j + nb]
    table = np.zeros(1 << k, dtype=np.int64)
    long_syms = []
    for s in np.flatnonzero(lengths):
        ln = int(lengths[s])
        if ln <= k:
            base = int(codes[s]) << (k - ln)
            table[base:base + (1 << (k - ln))] = (int(s) << 8) | ln
        else:
            long_syms.append((ln, int(codes[s]), int(s)))
    long_map = {(ln, c): s for ln, c, s in long_syms}
    max_len = int(lengths.max())
    tab = table.tolist()
    win = windows.tolist()
    bl = bits.tolist()
    out = [0] * count
    pos = 0
    try:
        for n in range(count):
            e = tab[win[pos]]
            if e:
                out[n] = e >> 8
                pos += e & 255
                continue
            code = win[pos]
            ln = k
            while True:
                ln += 1
                if ln > max_len or pos + ln > nb:
                    raise HuffmanDecodeError(f"invalid code at bit {pos}")
                code = (code << 1) | bl[pos + ln - 1]
                s = long_map.get((ln, code))
                if s is not None:
                    out[n] = s
                    pos += ln
                    break
    except IndexError:
        raise HuffmanDecodeError("bitstream ended before all symbols were decoded") from None
    if pos > nb:
        raise HuffmanDecodeError("bitstream ended before all symbols were decoded")
    return np.asarray(out, dtype=np.int64)


def table_size(alphabet_size: int) -> int:
    return 4 + alphabet_size


def encode_stream(symbols, alphabet_size: int) -> bytes:
    symbols = np.asarray(symbols).reshape(-1)
    lengths, payload, nbits = huffman_encode(symbols, alphabet_size)
    table = np.zeros(alphabet_size, dtype=np.uint8)
    table[:len(lengths)] = lengths
    return struct.pack("<I", alphabet_size) + table.tobytes() + struct.pack("<QQ", len(symbols), nbits) + payload


def decode_stream(buf: bytes) -> np.ndarray:
    try:
        (alphabet,) = struct.unpack_from("<I", buf, 0)
        if alphabet > MAX_ALPHABET:
            raise HuffmanDecodeError("alphabet size too large")
        if len(buf) < 4 + alphabet:
            raise HuffmanDecodeError("truncated Huffman code table")
        lengths = np.frombuffer(buf, dtype=np.uint8, count=alphabet, offset=4)
        count, nbits = struct.unpack_from("<QQ", buf, 4 + alphabet)
    except struct.error as e:
        raise HuffmanDecodeError(f"truncated Huffman stream: {e}") from None
    payload = buf[4 + alphabet + 16:]
    if len(payload) != (nbits + 7) // 8:
        raise HuffmanDecodeError("payload length does not match bit count")
    out = huffman_decode(lengths, payload, count, nbits)
    return out
